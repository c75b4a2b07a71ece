"""Volumetric rasters with spacing, masks, ROI boxes, slabs, and YVOL disk I/O.

Conventions used throughout the package:

* A volume raster is a C-ordered float32 array of shape ``(d, h, w)``; the
  last index varies fastest in memory.
* Grid axes are named ``axial`` (axis 0), ``coronal`` (axis 1) and
  ``sagittal`` (axis 2). Index triples (ROI corners, margins) follow the
  same axis order as ``dims``.
* Volumes are immutable after construction; every operation returns a new
  volume, so they are safe to share across worker threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    EmptyMask,
    FormatError,
    IndexOutOfRange,
    InvalidParam,
    InvalidSlabWidth,
)

AXES = ("axial", "coronal", "sagittal")

_MAGIC = b"YVOL1\0"
_HEADER = struct.Struct("<6s3I3f")


def axis_index(axis: str | int) -> int:
    """Map an axis name (or a 0..2 integer) to its grid axis index."""
    if isinstance(axis, int):
        if axis not in (0, 1, 2):
            raise InvalidParam(f"axis index must be 0, 1, or 2, got {axis}")
        return axis
    try:
        return AXES.index(axis)
    except ValueError:
        raise InvalidParam(f"unknown axis {axis!r}; expected one of {AXES}") from None


def _as_raster(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data)
    if not (arr.dtype == np.float32 and arr.flags.c_contiguous and not arr.flags.writeable):
        # own a fresh buffer so freezing it cannot surprise the caller
        arr = np.array(arr, dtype=np.float32, order="C")
        arr.flags.writeable = False
    if arr.ndim != 3:
        raise DimMismatch(f"volume raster must be 3-D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise DimMismatch(f"volume dims must be >= 1 per axis, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidParam("volume raster contains non-finite values")
    return arr


@dataclass(frozen=True)
class Volume:
    """A 3-D scalar raster (float32, arbitrary units) with voxel spacing in mm."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "data", _as_raster(self.data))
        sp = tuple(float(s) for s in self.spacing_mm)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise InvalidParam(f"spacing must be three positive reals, got {self.spacing_mm}")
        object.__setattr__(self, "spacing_mm", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        """New volume on the same grid (spacing preserved)."""
        return Volume(data, self.spacing_mm)

    def range(self) -> float:
        """Intensity range max - min (used to resolve relative noise levels)."""
        return float(self.data.max() - self.data.min())


def wrap_owned(data: np.ndarray, spacing_mm: tuple[float, float, float]) -> Volume:
    """Wrap a freshly computed raster without copying or re-validating.

    Internal fast path for arithmetic results whose finiteness follows from
    finite inputs. The array must not be referenced elsewhere; it is frozen
    in place.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    arr.flags.writeable = False
    v = object.__new__(Volume)
    object.__setattr__(v, "data", arr)
    object.__setattr__(v, "spacing_mm", tuple(float(s) for s in spacing_mm))
    return v


@dataclass(frozen=True)
class Mask:
    """Boolean raster aligned with a volume grid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if not (arr.dtype == bool and arr.flags.c_contiguous and not arr.flags.writeable):
            arr = np.array(arr, dtype=bool, order="C")
            arr.flags.writeable = False
        if arr.ndim != 3:
            raise DimMismatch(f"mask raster must be 3-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned index box: ``lo`` inclusive, ``hi`` exclusive, grid axis order."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a >= b for a, b in zip(lo, hi)):
            raise InvalidParam(f"ROI box requires lo < hi componentwise, got {lo}..{hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Slab:
    """A stack of ``n_slices`` consecutive slices along one axis.

    ``data`` has shape ``(n_slices, *in_plane)`` where the in-plane dims are the
    volume dims with the slab axis removed. Boundary neighbors are filled by
    edge replication, so the raster never reads outside the source volume.
    """

    axis: str
    center_index: int
    n_slices: int
    data: np.ndarray

    @property
    def in_plane_dims(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def center_slice(self) -> np.ndarray:
        return self.data[self.n_slices // 2]


def roi_from_mask(mask: Mask, margins: tuple[int, int, int]) -> RoiBox:
    """Tight bounding box of the mask's true voxels, expanded per-axis and clamped.

    Margins follow the grid axis order (axial, coronal, sagittal).
    """
    if not mask.data.any():
        raise EmptyMask("cannot derive an ROI from an empty mask")
    lo, hi = [], []
    for ax in range(3):
        other = tuple(a for a in range(3) if a != ax)
        hit = np.any(mask.data, axis=other)
        idx = np.flatnonzero(hit)
        lo.append(max(0, int(idx[0]) - int(margins[ax])))
        hi.append(min(mask.dims[ax], int(idx[-1]) + 1 + int(margins[ax])))
    return RoiBox(tuple(lo), tuple(hi))


def extract_slab(v: Volume, axis: str | int, index: int, n_slices: int) -> Slab:
    """Extract ``n_slices`` consecutive slices centered at ``index`` along ``axis``."""
    ax = axis_index(axis)
    if n_slices < 1 or n_slices % 2 == 0:
        raise InvalidSlabWidth(f"n_slices must be odd and positive, got {n_slices}")
    n_ax = v.dims[ax]
    if not 0 <= index < n_ax:
        raise IndexOutOfRange(f"slice index {index} outside [0, {n_ax}) along axis {ax}")
    half = (n_slices - 1) // 2
    picks = np.clip(np.arange(index - half, index + half + 1), 0, n_ax - 1)
    data = np.moveaxis(np.take(v.data, picks, axis=ax), ax, 0)
    name = AXES[ax]
    return Slab(axis=name, center_index=int(index), n_slices=int(n_slices), data=np.ascontiguousarray(data))


def reorient(v: Volume, axis: str | int) -> Volume:
    """Permute the raster so the requested axis becomes the leading (slicing) axis.

    ``reorient_inverse`` with the same axis restores the original layout exactly.
    """
    ax = axis_index(axis)
    if ax == 0:
        return v
    data = np.moveaxis(v.data, ax, 0)
    spacing = list(v.spacing_mm)
    spacing.insert(0, spacing.pop(ax))
    return Volume(data, tuple(spacing))


def reorient_inverse(v: Volume, axis: str | int) -> Volume:
    """Undo :func:`reorient` for the given axis."""
    ax = axis_index(axis)
    if ax == 0:
        return v
    data = np.moveaxis(v.data, 0, ax)
    spacing = list(v.spacing_mm)
    spacing.insert(ax, spacing.pop(0))
    return Volume(data, tuple(spacing))


def crop(v: Volume, box: RoiBox) -> Volume:
    if any(b > d for b, d in zip(box.hi, v.dims)) or any(a < 0 for a in box.lo):
        raise DimMismatch(f"ROI box {box.lo}..{box.hi} exceeds volume dims {v.dims}")
    (x0, y0, z0), (x1, y1, z1) = box.lo, box.hi
    return v.with_data(v.data[x0:x1, y0:y1, z0:z1])


def crop_mask(m: Mask, box: RoiBox) -> Mask:
    if any(b > d for b, d in zip(box.hi, m.dims)) or any(a < 0 for a in box.lo):
        raise DimMismatch(f"ROI box {box.lo}..{box.hi} exceeds mask dims {m.dims}")
    (x0, y0, z0), (x1, y1, z1) = box.lo, box.hi
    return Mask(m.data[x0:x1, y0:y1, z0:z1])


def apply_mask(v: Volume, m: Mask, fill: float = 0.0) -> Volume:
    """Write ``fill`` outside the mask."""
    if m.dims != v.dims:
        raise DimMismatch(f"mask dims {m.dims} != volume dims {v.dims}")
    return v.with_data(np.where(m.data, v.data, np.float32(fill)))


def save(v: Volume, path: str | Path, sidecar: dict | None = None) -> None:
    """Write the YVOL binary format (plus an optional JSON sidecar).

    Layout, all little-endian: magic ``YVOL1\\0`` (6 bytes), 3 x u32 dims
    (d, h, w), 3 x f32 spacing, then d*h*w float32 values.
    """
    path = Path(path)
    header = _HEADER.pack(_MAGIC, *v.dims, *(np.float32(s) for s in v.spacing_mm))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(v.data, dtype="<f4").tobytes())
    if sidecar is not None:
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load(path: str | Path) -> Volume:
    """Read a YVOL file; raises :class:`FormatError` on any corruption."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the YVOL header")
    magic, d, h, w, sx, sy, sz = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = d * h * w
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * n:
        raise FormatError(f"{path}: header declares {n} voxels but payload holds {len(payload) // 4}")
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w)
    try:
        return Volume(data, (sx, sy, sz))
    except (InvalidParam, DimMismatch) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_sidecar(path: str | Path) -> dict | None:
    sidecar = Path(path).with_suffix(Path(path).suffix + ".json")
    if sidecar.exists():
        return json.loads(sidecar.read_text())
    return None
