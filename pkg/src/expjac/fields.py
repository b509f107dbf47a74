"""Grid field containers and the DFLD binary format.

Layout conventions used throughout the package (index space, unit voxels):

* displacement field: array of shape ``(d, *dims)``; component ``r`` is the
  displacement along axis ``r``.
* Jacobian field: array of shape ``(*dims, d, d)``; ``J[..., r, c]`` is
  ``d phi_r / d x_c``.
* scalar / label volume: array of shape ``dims``.

DFLD file layout (little-endian)::

    b"DFLD" | u8 rank | u8 ncomp | u8 precision (0=f32, 1=f64) | u8 flags
    | u32 extent * rank | f64 spacing * rank | payload

The payload stores the components one after another, each in C order (last
axis fastest).  Bit 0 of ``flags`` records the zero-on-boundary flag.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from expjac.errors import (
    BadMagic,
    IoFailure,
    ShapeMismatch,
    ShapeTooSmall,
    TruncatedPayload,
    UnsupportedPrecision,
)

MAGIC = b"DFLD"
_PRECISIONS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_FLAG_BOUNDARY_ZERO = 0x01


def header_size(rank: int) -> int:
    return 8 + 4 * rank + 8 * rank


@dataclass(frozen=True)
class GridShape:
    dims: tuple[int, ...]
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) not in (2, 3):
            raise ShapeMismatch(f"grid rank must be 2 or 3, got {len(dims)}")
        if any(n < 3 for n in dims):
            raise ShapeTooSmall(f"every extent must be >= 3, got {dims}")
        spacing = tuple(float(s) for s in self.spacing) or (1.0,) * len(dims)
        if len(spacing) != len(dims):
            raise ShapeMismatch("spacing length does not match grid rank")
        if not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))


@dataclass(frozen=True)
class DisplacementField:
    """Immutable displacement field with ``components.shape == (d, *dims)``."""

    components: np.ndarray
    spacing: tuple[float, ...] = ()
    boundary_zero: bool = False
    shape: GridShape = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = np.array(self.components, copy=True)
        if comps.dtype not in _CODES:
            comps = comps.astype(np.float64)
        if comps.ndim < 1 or comps.shape[0] != comps.ndim - 1:
            raise ShapeMismatch(
                f"expected (d, *dims) with d == len(dims), got {comps.shape}"
            )
        grid = GridShape(comps.shape[1:], self.spacing)
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "spacing", grid.spacing)
        object.__setattr__(self, "shape", grid)

    @classmethod
    def zeros(cls, dims: Sequence[int], dtype=np.float64, **kw) -> "DisplacementField":
        return cls(np.zeros((len(dims), *dims), dtype=dtype), **kw)

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims

    @property
    def dtype(self) -> np.dtype:
        return self.components.dtype

    def __eq__(self, other):
        if not isinstance(other, DisplacementField):
            return NotImplemented
        return (
            self.components.dtype == other.components.dtype
            and self.components.shape == other.components.shape
            and self.spacing == other.spacing
            and self.boundary_zero == other.boundary_zero
            and self.components.tobytes() == other.components.tobytes()
        )

    __hash__ = None


def as_components(phi) -> np.ndarray:
    """Return the ``(d, *dims)`` array behind ``phi`` (field or array)."""
    if isinstance(phi, DisplacementField):
        return phi.components
    return np.asarray(phi)


def boundary_mask(dims: Sequence[int]) -> np.ndarray:
    mask = np.zeros(tuple(dims), dtype=bool)
    for ax in range(len(dims)):
        idx = [slice(None)] * len(dims)
        idx[ax] = 0
        mask[tuple(idx)] = True
        idx[ax] = -1
        mask[tuple(idx)] = True
    return mask


# --------------------------------------------------------------------------
# DFLD I/O
# --------------------------------------------------------------------------

def encode(components: np.ndarray, spacing: Sequence[float], boundary_zero: bool = False) -> bytes:
    components = np.asarray(components)
    if components.dtype not in _CODES:
        raise UnsupportedPrecision(f"cannot encode dtype {components.dtype}")
    ncomp, dims = components.shape[0], components.shape[1:]
    rank = len(dims)
    head = struct.pack(
        "<4sBBBB", MAGIC, rank, ncomp, _CODES[components.dtype],
        _FLAG_BOUNDARY_ZERO if boundary_zero else 0,
    )
    head += struct.pack(f"<{rank}I", *dims)
    head += struct.pack(f"<{rank}d", *spacing)
    dt = _PRECISIONS[_CODES[components.dtype]]
    return head + np.ascontiguousarray(components, dtype=dt).tobytes()


def decode(buf: bytes):
    """Decode a DFLD buffer into ``(components, spacing, boundary_zero)``."""
    if len(buf) < 8:
        raise TruncatedPayload("buffer shorter than the fixed header")
    magic, rank, ncomp, prec, flags = struct.unpack_from("<4sBBBB", buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {magic!r}")
    if prec not in _PRECISIONS:
        raise UnsupportedPrecision(f"unknown precision code {prec}")
    if rank == 0:
        raise ShapeMismatch("rank 0 field")
    hsize = header_size(rank)
    if len(buf) < hsize:
        raise TruncatedPayload("header truncated")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    spacing = struct.unpack_from(f"<{rank}d", buf, 8 + 4 * rank)
    dt = _PRECISIONS[prec]
    count = ncomp * int(np.prod(dims))
    expected = hsize + count * dt.itemsize
    if len(buf) < expected:
        raise TruncatedPayload(f"payload has {len(buf) - hsize} bytes, need {expected - hsize}")
    if len(buf) > expected:
        raise ShapeMismatch(f"{len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype=dt, count=count, offset=hsize)
    data = data.reshape((ncomp, *dims)).astype(dt.newbyteorder("="))
    return data, tuple(spacing), bool(flags & _FLAG_BOUNDARY_ZERO)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_field(path) -> DisplacementField:
    data, spacing, bflag = decode(_read_bytes(path))
    if data.shape[0] != data.ndim - 1:
        raise ShapeMismatch(
            f"{path}: {data.shape[0]} components for a rank-{data.ndim - 1} grid"
        )
    return DisplacementField(data, spacing=spacing, boundary_zero=bflag)


def write_field(field: DisplacementField, path, metadata: dict | None = None) -> None:
    _write_bytes(path, encode(field.components, field.spacing, field.boundary_zero))
    if metadata is not None:
        _write_bytes(str(path) + ".json", json.dumps(metadata, indent=2, sort_keys=True).encode())


def read_volume(path) -> tuple[np.ndarray, tuple[float, ...]]:
    """Read a single-component DFLD file (scalar image or label map)."""
    data, spacing, _ = decode(_read_bytes(path))
    if data.shape[0] != 1:
        raise ShapeMismatch(f"{path}: expected 1 component, found {data.shape[0]}")
    return data[0], spacing


def write_volume(volume: np.ndarray, path, spacing: Sequence[float] | None = None) -> None:
    volume = np.asarray(volume)
    if volume.dtype not in _CODES:
        volume = volume.astype(np.float64)
    spacing = tuple(spacing) if spacing is not None else (1.0,) * volume.ndim
    _write_bytes(path, encode(volume[None], spacing))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate(field: DisplacementField) -> list[str]:
    """List every invariant violation; an empty list means the field is valid."""
    problems = []
    comps = field.components
    if comps.shape[0] != comps.ndim - 1:
        problems.append(f"component count {comps.shape[0]} != grid rank {comps.ndim - 1}")
    for ax, n in enumerate(comps.shape[1:]):
        if n < 3:
            problems.append(f"axis {ax}: extent {n} < 3")
    for ax, s in enumerate(field.spacing):
        if not s > 0:
            problems.append(f"axis {ax}: non-positive spacing {s}")
    bad = ~np.isfinite(comps)
    for c, *vox in zip(*np.nonzero(bad)):
        problems.append(f"component {c} voxel {tuple(int(v) for v in vox)}: non-finite value {comps[(c, *vox)]}")
    if field.boundary_zero:
        nz = (comps != 0) & boundary_mask(comps.shape[1:])[None]
        for c, *vox in zip(*np.nonzero(nz)):
            problems.append(
                f"component {c} voxel {tuple(int(v) for v in vox)}: boundary value {comps[(c, *vox)]} != 0"
            )
    return problems
