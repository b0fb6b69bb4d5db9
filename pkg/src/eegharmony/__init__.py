"""Spatial-attention channel harmonization for multi-montage EEG."""

__version__ = "0.1.0"
