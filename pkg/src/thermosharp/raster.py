"""Raster data model and file I/O.

A raster is a single-band 2-D grid with a validity mask and a square pixel
size in meters. Values are float64 in memory and float32 on disk; invalid
(masked) pixels are stored as 0.0 in memory and serialized as NaN. Grids are
immutable: every operation returns a new grid.

On-disk format: a ``.f32raw`` payload (little-endian float32, row-major) next
to a JSON sidecar named like the payload with the extension replaced by
``.json``. The sidecar carries ``width``, ``height``, ``pixel_size_m``,
``units`` and an optional ``stats`` block.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PAYLOAD_DTYPE = np.dtype("<f4")


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Single-band raster: float64 values, boolean validity mask, pixel size.

    ``mask`` is True on valid pixels. If omitted, non-finite values are
    treated as invalid. Values at invalid pixels are normalized to 0.0 so
    downstream mask-weighted arithmetic never meets NaN.
    """

    values: np.ndarray
    pixel_size: float
    mask: np.ndarray | None = None
    units: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("values must be a 2-D array with positive dims")
        if not (np.isfinite(self.pixel_size) and self.pixel_size > 0):
            raise ValueError("pixel_size must be positive")
        if self.mask is None:
            m = np.isfinite(v)
        else:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != v.shape:
                raise ValueError("mask shape must match values shape")
            if not np.all(np.isfinite(v[m])):
                raise ValueError("values must be finite where mask is true")
        v = np.where(m, v, 0.0)
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "mask", _readonly(m))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def valid_values(self):
        return self.values[self.mask]

    def all_valid(self):
        return bool(self.mask.all())

    def crop(self, row0, row1, col0, col1):
        return Grid2D(self.values[row0:row1, col0:col1],
                      self.pixel_size,
                      self.mask[row0:row1, col0:col1],
                      self.units)


def as_values_mask(obj):
    """Accept a Grid2D or a bare array; return (float64 values, bool mask)."""
    if isinstance(obj, Grid2D):
        return obj.values, obj.mask
    v = np.asarray(obj, dtype=np.float64)
    return v, np.isfinite(v)


@dataclass(frozen=True, eq=False)
class ScenePair:
    """A coarse thermal grid with its fine vegetation-index companion.

    The fine grid covers the same footprint at ``r`` times the resolution:
    dims scale by r, pixel size divides by r.
    """

    lst_lr: Grid2D
    ndvi_hr: Grid2D
    r: int

    def __post_init__(self):
        if int(self.r) < 2:
            raise ValueError("scale factor r must be an integer >= 2")
        object.__setattr__(self, "r", int(self.r))
        if (self.ndvi_hr.height != self.r * self.lst_lr.height
                or self.ndvi_hr.width != self.r * self.lst_lr.width):
            raise ValueError("fine grid dims must equal r times coarse dims")
        if not np.isclose(self.lst_lr.pixel_size,
                          self.r * self.ndvi_hr.pixel_size, rtol=1e-9):
            raise ValueError("coarse pixel size must equal r times fine pixel size")


@dataclass(frozen=True, eq=False)
class EvalTriple:
    """A ScenePair plus the fine-scale thermal reference used for scoring."""

    pair: ScenePair
    ref_hr: Grid2D

    def __post_init__(self):
        if self.ref_hr.shape != self.pair.ndvi_hr.shape:
            raise ValueError("reference dims must match fine grid dims")
        if not np.isclose(self.ref_hr.pixel_size,
                          self.pair.ndvi_hr.pixel_size, rtol=1e-9):
            raise ValueError("reference pixel size must match fine grid")


@dataclass(frozen=True)
class NormStats:
    """Dataset standardization constants for the two bands."""

    lst_mean: float
    lst_std: float
    ndvi_mean: float
    ndvi_std: float

    def __post_init__(self):
        for name in ("lst_std", "ndvi_std"):
            if not getattr(self, name) > 0:
                raise ValueError(name + " must be strictly positive")

    def to_dict(self):
        return {"lst_mean": self.lst_mean, "lst_std": self.lst_std,
                "ndvi_mean": self.ndvi_mean, "ndvi_std": self.ndvi_std}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lst_mean"]), float(d["lst_std"]),
                   float(d["ndvi_mean"]), float(d["ndvi_std"]))


def compute_norm_stats(pairs) -> NormStats:
    """Pool valid pixels across scene pairs and return band means and stds.

    A degenerate band (std below 1e-12, e.g. an all-constant dataset) falls
    back to std 1.0 so standardization stays defined.
    """
    lst = np.concatenate([p.lst_lr.valid_values() for p in pairs])
    ndvi = np.concatenate([p.ndvi_hr.valid_values() for p in pairs])
    if lst.size == 0 or ndvi.size == 0:
        raise ValueError("no valid pixels to compute stats from")

    def _stats(x):
        mean = float(x.mean())
        std = float(x.std())
        return mean, (std if std > 1e-12 else 1.0)

    lm, ls = _stats(lst)
    nm, ns = _stats(ndvi)
    return NormStats(lm, ls, nm, ns)


def _sidecar_path(path):
    return os.path.splitext(str(path))[0] + ".json"


def save_raster(grid: Grid2D, path) -> None:
    """Write the float32 payload to ``path`` and the JSON sidecar next to it."""
    payload = np.where(grid.mask, grid.values, np.nan).astype(PAYLOAD_DTYPE)
    valid = grid.valid_values()
    sidecar = {
        "width": grid.width,
        "height": grid.height,
        "pixel_size_m": grid.pixel_size,
        "units": grid.units,
        "stats": {
            "valid_count": int(grid.mask.sum()),
            "min": float(valid.min()) if valid.size else None,
            "max": float(valid.max()) if valid.size else None,
            "mean": float(valid.mean()) if valid.size else None,
        },
    }
    with open(path, "wb") as f:
        f.write(payload.tobytes())
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f, indent=1)
        f.write("\n")


def load_raster(path) -> Grid2D:
    """Read a payload + sidecar pair written by save_raster."""
    side = _sidecar_path(path)
    try:
        with open(side) as f:
            meta = json.load(f)
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError as e:
        raise DataError(f"missing raster file: {e.filename}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt sidecar {side}: {e}") from e
    try:
        w, h = int(meta["width"]), int(meta["height"])
        pixel_size = float(meta["pixel_size_m"])
        units = str(meta.get("units", ""))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid sidecar fields in {side}: {e}") from e
    if pixel_size <= 0 or w < 1 or h < 1:
        raise DataError(f"non-positive dims or pixel size in {side}")
    expected = w * h * PAYLOAD_DTYPE.itemsize
    if len(raw) != expected:
        raise DataError(f"payload size mismatch for {path}: "
                        f"got {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(h, w).astype(np.float64)
    return Grid2D(values, pixel_size, np.isfinite(values), units)


def grid_to_csv(grid: Grid2D, path) -> None:
    """Export values as comma-separated rows, NaN marking invalid pixels."""
    out = np.where(grid.mask, grid.values, np.nan)
    np.savetxt(path, out, delimiter=",", fmt="%.17g")


def grid_from_csv(path, pixel_size, units="") -> Grid2D:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except FileNotFoundError as e:
        raise DataError(f"missing csv file: {path}") from e
    except ValueError as e:
        raise DataError(f"corrupt csv {path}: {e}") from e
    return Grid2D(values, pixel_size, units=units)


def block_mean(hr, r) -> Grid2D:
    """Aggregate an r x r block mean over valid pixels.

    Output pixels with no valid source pixel are masked. Accepts a Grid2D
    (returns a Grid2D with pixel size scaled by r) or a bare 2-D array
    (returns an array, all pixels assumed valid).
    """
    r = int(r)
    if r < 1:
        raise ValueError("block factor must be >= 1")
    grid = isinstance(hr, Grid2D)
    v, m = as_values_mask(hr)
    h, w = v.shape
    if h % r or w % r:
        raise ValueError("grid dims must be divisible by the block factor")
    vb = v.reshape(h // r, r, w // r, r)
    mb = m.reshape(h // r, r, w // r, r)
    count = mb.sum(axis=(1, 3))
    total = (vb * mb).sum(axis=(1, 3))
    out_mask = count > 0
    out = np.divide(total, count, out=np.zeros_like(total), where=out_mask)
    if not grid:
        return out
    return Grid2D(out, hr.pixel_size * r, out_mask, hr.units)
