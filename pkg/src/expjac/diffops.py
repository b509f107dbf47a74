"""Finite-difference vector calculus on regular grids (unit voxel spacing).

Derivatives use central differences at interior voxels and first-order
one-sided differences on the two end slices of each axis, i.e. the same
stencil as ``numpy.gradient(..., edge_order=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from expjac.errors import ShapeTooSmall
from expjac.fields import as_components


@dataclass(frozen=True)
class StencilScheme:
    interior: str = "central"
    boundary: str = "one_sided_first_order"

    def __post_init__(self):
        if (self.interior, self.boundary) != ("central", "one_sided_first_order"):
            raise ValueError(f"unsupported stencil {self.interior}/{self.boundary}")

    def as_dict(self) -> dict:
        return {"interior": self.interior, "boundary": self.boundary}


CENTRAL = StencilScheme()


def _check_extents(shape):
    if any(n < 3 for n in shape):
        raise ShapeTooSmall(f"every extent must be >= 3, got {tuple(shape)}")


def diff(u: np.ndarray, axis: int) -> np.ndarray:
    """First derivative of ``u`` along ``axis``."""
    return np.gradient(u, axis=axis, edge_order=1)


def diff_adjoint(w: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`diff` with respect to the Euclidean inner product."""
    w = np.moveaxis(np.asarray(w, dtype=float), axis, 0)
    out = np.zeros_like(w)
    out[2:] += 0.5 * w[1:-1]
    out[:-2] -= 0.5 * w[1:-1]
    out[0] -= w[0]
    out[1] += w[0]
    out[-1] += w[-1]
    out[-2] -= w[-1]
    return np.moveaxis(out, 0, axis)


def jacobian(phi) -> np.ndarray:
    """Per-voxel Jacobian ``J[..., r, c] = d phi_r / d x_c`` of a displacement field."""
    comps = as_components(phi)
    d = comps.shape[0]
    _check_extents(comps.shape[1:])
    out = np.empty(comps.shape[1:] + (d, d), dtype=np.result_type(comps.dtype, np.float32))
    for r in range(d):
        for c in range(d):
            out[..., r, c] = diff(comps[r], c)
    return out


def jacobian_adjoint(jbar: np.ndarray) -> np.ndarray:
    """Transpose of :func:`jacobian`: maps a matrix-field cotangent to a field cotangent."""
    d = jbar.shape[-1]
    out = np.zeros((d,) + jbar.shape[:-2])
    for r in range(d):
        for c in range(d):
            out[r] += diff_adjoint(jbar[..., r, c], c)
    return out


def divergence_rows(J: np.ndarray) -> np.ndarray:
    """Divergence of every row of a matrix field; returns shape ``(d, *dims)``.

    Volume ``t`` is ``sum_c d J[..., t, c] / d x_c``.
    """
    J = np.asarray(J)
    d = J.shape[-1]
    _check_extents(J.shape[:-2])
    out = np.zeros((d,) + J.shape[:-2], dtype=np.result_type(J.dtype, np.float32))
    for t in range(d):
        for c in range(d):
            out[t] += diff(J[..., t, c], c)
    return out


def divergence_rows_adjoint(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    d = w.shape[0]
    out = np.zeros(w.shape[1:] + (d, d))
    for t in range(d):
        for c in range(d):
            out[..., t, c] = diff_adjoint(w[t], c)
    return out


def curl_rows(J: np.ndarray, spacing=None) -> np.ndarray:
    """Discrete curl of every row of a matrix field.

    2D input gives shape ``(2, H, W)`` (scalar curl ``d_0 g_1 - d_1 g_0`` per
    row); 3D input gives ``(3, 3, H, D, W)`` with the curl vector of row ``t``
    in ``out[t]``.  ``spacing`` converts index-space derivatives to physical
    units.
    """
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    _check_extents(J.shape[:-2])
    h = (1.0,) * d if spacing is None else tuple(float(s) for s in spacing)

    def dd(g, ax):
        return diff(g, ax) / h[ax]

    if d == 2:
        return np.stack([dd(J[..., t, 1], 0) - dd(J[..., t, 0], 1) for t in range(2)])
    if d == 3:
        rows = []
        for t in range(3):
            g = [J[..., t, c] for c in range(3)]
            rows.append(np.stack([
                dd(g[2], 1) - dd(g[1], 2),
                dd(g[0], 2) - dd(g[2], 0),
                dd(g[1], 0) - dd(g[0], 1),
            ]))
        return np.stack(rows)
    raise ValueError(f"curl needs a 2D or 3D matrix field, got d={d}")


def discrete_laplacian(u: np.ndarray) -> np.ndarray:
    """Standard (2d+1)-point Laplacian with values outside the grid taken as 0.

    Its eigenvectors are the DST-I sine modes with eigenvalues ``-lambda``,
    ``lambda = sum_axes (2 - 2 cos(k pi / (N + 1)))``.
    """
    u = np.asarray(u, dtype=float)
    p = np.pad(u, 1)
    inner = tuple(slice(1, -1) for _ in range(u.ndim))
    out = -2.0 * u.ndim * u
    for ax in range(u.ndim):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out = out + p[tuple(lo)] + p[tuple(hi)]
    return out
