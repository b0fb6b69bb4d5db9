"""Minimal EEG preprocessing: re-referencing, zero-phase FIR band-pass,
rational resampling, epoching and per-epoch mean removal."""

from __future__ import annotations

from fractions import Fraction
from math import gcd

import numpy as np
from scipy.signal import fftconvolve, firwin, resample_poly

# transition half-width (Hz) on either side of the passband edges
TRANSITION_HALF = 0.125
REFERENCE_ORDER = 6601
REFERENCE_RATE = 500.0


def remove_mean(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    return data - data.mean(axis=-1, keepdims=True)


def rereference(data, ref_indices) -> np.ndarray:
    """Subtract the mean of the reference channels from every channel."""
    data = np.asarray(data, dtype=float)
    ref_indices = list(ref_indices)
    if not ref_indices:
        raise ValueError("at least one reference channel required")
    n = data.shape[0]
    bad = [i for i in ref_indices if not (isinstance(i, (int, np.integer)) and -n <= i < n)]
    if bad:
        raise IndexError(f"reference indices out of range for {n} channels: {bad}")
    return data - data[ref_indices].mean(axis=0, keepdims=True)


def filter_order(rate: float) -> int:
    """Tap count scaled from 6601 at 500 Hz, rounded down to an odd number."""
    n = int(REFERENCE_ORDER * rate / REFERENCE_RATE)
    return n if n % 2 else n - 1


def bandpass_taps(rate: float, lo: float = 0.25, hi: float = 25.0) -> np.ndarray:
    """Hamming windowed-sinc band-pass with -6 dB points at lo-0.125 and hi+0.125 Hz."""
    return firwin(filter_order(rate), [lo - TRANSITION_HALF, hi + TRANSITION_HALF],
                  pass_zero=False, window="hamming", fs=rate)


def fir_bandpass(signal, rate: float, lo: float = 0.25, hi: float = 25.0) -> np.ndarray:
    """Zero-phase band-pass along the last axis (forward and backward pass).

    Edges are extended by odd reflection over one filter length before
    filtering and trimmed afterwards.
    """
    x = np.asarray(signal, dtype=float)
    if rate <= 2 * hi:
        raise ValueError(f"sampling rate {rate} Hz must exceed twice the upper edge {hi} Hz")
    taps = bandpass_taps(rate, lo, hi)
    n = len(taps)
    T = x.shape[-1]
    if T <= n:
        raise ValueError(f"signal of {T} samples is shorter than the {n}-tap filter")
    first = x[..., :1]
    last = x[..., -1:]
    head = 2 * first - x[..., n:0:-1]
    tail = 2 * last - x[..., -2:-n - 2:-1]
    ext = np.concatenate([head, x, tail], axis=-1)
    kernel = taps.reshape((1,) * (x.ndim - 1) + (-1,))
    y = fftconvolve(ext, kernel, mode="same", axes=-1)
    y = fftconvolve(y[..., ::-1], kernel, mode="same", axes=-1)[..., ::-1]
    return y[..., n:n + T]


def resample(signal, p: int, q: int) -> np.ndarray:
    """Polyphase rational resampling by p/q along the last axis."""
    if p < 1 or q < 1:
        raise ValueError("p and q must be positive")
    g = gcd(p, q)
    p, q = p // g, q // g
    x = np.asarray(signal, dtype=float)
    if p == q:
        return x.copy()
    return resample_poly(x, p, q, axis=-1)


def rate_ratio(src: float, dst: float) -> tuple[int, int]:
    frac = Fraction(dst).limit_denominator(10_000) / Fraction(src).limit_denominator(10_000)
    return frac.numerator, frac.denominator


def epoch_windows(signal, win: int = 256) -> list[np.ndarray]:
    """Consecutive non-overlapping windows; a trailing remainder is dropped."""
    x = np.asarray(signal)
    n = x.shape[-1] // win
    return [x[..., i * win:(i + 1) * win] for i in range(n)]


def preprocess_recording(raw, rate: float, ref_indices, out_rate: float = 128.0,
                         win: int = 256) -> list[np.ndarray]:
    """rereference -> band-pass -> resample -> epoch -> per-epoch mean removal."""
    x = rereference(raw, ref_indices)
    x = fir_bandpass(x, rate)
    p, q = rate_ratio(rate, out_rate)
    x = resample(x, p, q)
    return [remove_mean(w) for w in epoch_windows(x, win)]
