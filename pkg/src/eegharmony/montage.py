"""Sensor geometry: 3-D positions, planar projection, normalized layouts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MARGIN = 0.1


class GeometryError(ValueError):
    """Invalid sensor geometry (zero-norm or non-finite position)."""


class MontageFileError(ValueError):
    """Malformed montage CSV."""


@dataclass(frozen=True)
class Sensor:
    name: str
    pos3d: tuple[float, float, float]

    def __post_init__(self):
        p = np.asarray(self.pos3d, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise GeometryError(f"sensor {self.name!r}: position must be 3 finite values")
        if np.linalg.norm(p) == 0.0:
            raise GeometryError(f"sensor {self.name!r}: position at head center")
        object.__setattr__(self, "pos3d", tuple(float(v) for v in p))


def project_to_plane(pos3d_list, names: Sequence[str] | None = None) -> np.ndarray:
    """Azimuthal-equidistant projection about +z.

    A point at polar angle ``theta`` and azimuth ``phi`` lands at
    ``(theta*cos(phi), theta*sin(phi))``, so the pole is the origin and the
    equator is the circle of radius pi/2 regardless of head radius.
    """
    p = np.asarray(pos3d_list, dtype=float).reshape(-1, 3)
    norms = np.linalg.norm(p, axis=1)
    for i, (row, r) in enumerate(zip(p, norms)):
        label = names[i] if names is not None else f"#{i}"
        if not np.all(np.isfinite(row)):
            raise GeometryError(f"sensor {label}: non-finite position")
        if r == 0.0:
            raise GeometryError(f"sensor {label}: zero-norm position")
    theta = np.arccos(np.clip(p[:, 2] / norms, -1.0, 1.0))
    phi = np.arctan2(p[:, 1], p[:, 0])
    return np.stack([theta * np.cos(phi), theta * np.sin(phi)], axis=1)


def normalize_layout(raw2d, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Per-axis min-max map of planar coordinates onto [margin, 1 - margin].

    An axis with zero extent (all coordinates equal) maps to 0.5.
    """
    if not 0.0 <= margin < 0.5:
        raise ValueError(f"margin must lie in [0, 0.5), got {margin}")
    raw = np.asarray(raw2d, dtype=float).reshape(-1, 2)
    if raw.shape[0] == 0:
        raise ValueError("cannot normalize an empty layout")
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    out = np.empty_like(raw)
    span = 1.0 - 2.0 * margin
    for ax in range(2):
        extent = hi[ax] - lo[ax]
        if extent == 0.0:
            out[:, ax] = 0.5
        else:
            out[:, ax] = margin + span * (raw[:, ax] - lo[ax]) / extent
    return out


@dataclass(frozen=True)
class Montage:
    """Ordered sensors plus the normalized 2-D layout used by spatial attention."""

    sensors: tuple[Sensor, ...]
    margin: float = DEFAULT_MARGIN
    layout2d: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sensors = tuple(self.sensors)
        if not sensors:
            raise ValueError("montage needs at least one sensor")
        names = [s.name for s in sensors]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate sensor names: {dupes}")
        object.__setattr__(self, "sensors", sensors)
        raw = project_to_plane([s.pos3d for s in sensors], names)
        layout = normalize_layout(raw, self.margin)
        layout.setflags(write=False)
        object.__setattr__(self, "layout2d", layout)

    @classmethod
    def from_positions(cls, names: Iterable[str], positions, margin: float = DEFAULT_MARGIN):
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        return cls(tuple(Sensor(n, tuple(p)) for n, p in zip(names, pos)), margin)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.sensors]

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.pos3d for s in self.sensors])

    def __len__(self):
        return len(self.sensors)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __eq__(self, other):
        if not isinstance(other, Montage):
            return NotImplemented
        return self.sensors == other.sensors and self.margin == other.margin

    def __hash__(self):
        return hash((self.sensors, self.margin))


def subsample_montage(m: Montage, names: Sequence[str]) -> Montage:
    """Montage restricted to ``names`` (in that order), layout recomputed."""
    lookup = {s.name: s for s in m.sensors}
    missing = [n for n in names if n not in lookup]
    if missing:
        raise KeyError(f"sensors not in montage: {missing}")
    return Montage(tuple(lookup[n] for n in names), m.margin)


def read_montage_csv(path, margin: float = DEFAULT_MARGIN) -> Montage:
    """Read ``name,x,y,z`` lines (meters); ``#`` lines are comments."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_montage_csv(text, margin)


def parse_montage_csv(text: str, margin: float = DEFAULT_MARGIN) -> Montage:
    sensors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader([stripped]))
        if len(row) != 4:
            raise MontageFileError(f"line {lineno}: expected 4 fields 'name,x,y,z', got {len(row)}")
        name = row[0].strip()
        if not name:
            raise MontageFileError(f"line {lineno}: empty sensor name")
        try:
            xyz = tuple(float(v) for v in row[1:])
        except ValueError:
            raise MontageFileError(f"line {lineno}: non-numeric coordinate in {row[1:]}") from None
        try:
            sensors.append(Sensor(name, xyz))
        except GeometryError as exc:
            raise MontageFileError(f"line {lineno}: {exc}") from None
    if not sensors:
        raise MontageFileError("no sensors found")
    try:
        return Montage(tuple(sensors), margin)
    except ValueError as exc:
        raise MontageFileError(str(exc)) from None


def format_montage_csv(m: Montage) -> str:
    buf = io.StringIO()
    buf.write("# name,x,y,z (meters)\n")
    for s in m.sensors:
        x, y, z = s.pos3d
        buf.write(f"{s.name},{x!r},{y!r},{z!r}\n")
    return buf.getvalue()


def write_montage_csv(m: Montage, path) -> None:
    Path(path).write_text(format_montage_csv(m), encoding="utf-8")
