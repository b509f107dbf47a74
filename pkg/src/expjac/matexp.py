"""Batched matrix exponential by truncated Taylor series with scaling and squaring.

All routines accept a single ``(n, n)`` matrix or any stack ``(..., n, n)``
and work in float64 internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from expjac.errors import NonFiniteInput

METHODS = ("taylor_series", "scaling_squaring_taylor")


@dataclass(frozen=True)
class MatExpConfig:
    """Truncation settings.

    ``tol`` bounds the dropped Taylor tail relative to ``||e^A||``; ``None``
    picks 1e-14 for float64 inputs and 1e-7 for float32.
    """

    method: str = "scaling_squaring_taylor"
    max_terms: int = 18
    tol: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.max_terms < 2:
            raise ValueError("max_terms must be >= 2")
        if self.tol is not None and not (0.0 < self.tol < 1e-3):
            raise ValueError("tol must lie in (0, 1e-3)")

    def tolerance(self, dtype) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-7 if np.dtype(dtype) == np.float32 else 1e-14


DEFAULT = MatExpConfig()


def _tail_bound(norm: float, k: int) -> float:
    # ||sum_{j>k} B^j / j!|| <= norm^(k+1)/(k+1)! * 1 / (1 - norm/(k+2))
    if norm == 0.0:
        return 0.0
    ratio = norm / (k + 2)
    if ratio >= 1.0:
        return math.inf
    return math.exp((k + 1) * math.log(norm) - math.lgamma(k + 2)) / (1.0 - ratio)


def terms_needed(norm: float, tol: float, max_terms: int) -> int | None:
    """Smallest ``k <= max_terms`` whose tail bound is below ``tol * e^-norm``."""
    target = tol * math.exp(-norm)
    for k in range(1, max_terms + 1):
        if _tail_bound(norm, k) <= target:
            return k
    return None


def _check_finite(A: np.ndarray):
    finite = np.isfinite(A).all(axis=(-2, -1))
    if not finite.all():
        bad = np.argwhere(~finite)
        voxel = tuple(int(i) for i in bad[0]) if bad.size else None
        raise NonFiniteInput(f"non-finite matrix entries at {voxel}", voxel=voxel)


def _expm_stack(A: np.ndarray, cfg: MatExpConfig, tol: float) -> np.ndarray:
    n = A.shape[-1]
    batch = A.reshape(-1, n, n)
    norms = np.abs(batch).sum(axis=-2).max(axis=-1) if batch.size else np.zeros(0)

    if cfg.method == "scaling_squaring_taylor":
        squarings = np.where(norms > 1.0, np.ceil(np.log2(np.maximum(norms, 1.0))), 0).astype(int)
    else:
        squarings = np.zeros(len(batch), dtype=int)
    scaled_norms = norms / 2.0 ** squarings
    top = float(scaled_norms.max()) if len(batch) else 0.0

    k = terms_needed(top, tol, cfg.max_terms)
    if k is None:
        if cfg.method == "taylor_series":
            k = cfg.max_terms
        else:
            # too few terms allowed: trade them for extra squarings
            extra = 0
            while k is None:
                extra += 1
                k = terms_needed(top / 2.0 ** extra, tol, cfg.max_terms)
            squarings = squarings + extra
    B = batch / (2.0 ** squarings)[:, None, None]

    eye = np.broadcast_to(np.eye(n), B.shape)
    term = eye.copy()
    total = eye.copy()
    for j in range(1, k + 1):
        term = term @ B / j
        total += term

    for i in range(int(squarings.max()) if len(batch) else 0):
        sel = squarings > i
        total[sel] = total[sel] @ total[sel]
    return total.reshape(A.shape)


def expm(A, cfg: MatExpConfig = DEFAULT) -> np.ndarray:
    """Matrix exponential of ``A`` (single matrix or stack)."""
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    tol = cfg.tolerance(A.dtype)
    A64 = A.astype(np.float64)
    _check_finite(A64)
    return _expm_stack(A64, cfg, tol)


def expm_field(J: np.ndarray, cfg: MatExpConfig = DEFAULT, check: bool = False) -> np.ndarray:
    """Voxel-wise exponential of a Jacobian field ``(*dims, d, d)``.

    float32 input is computed in float64 and returned as float32.  With
    ``check=True`` the result is verified to have positive determinant at
    every voxel.
    """
    J = np.asarray(J)
    out = expm(J, cfg)
    if check:
        dets = np.linalg.det(out)
        if not (dets > 0).all():
            bad = tuple(int(i) for i in np.argwhere(~(dets > 0))[0])
            raise ArithmeticError(f"det(expm) <= 0 at voxel {bad}")
    return out.astype(J.dtype) if J.dtype == np.float32 else out


def frechet(A, E, cfg: MatExpConfig = DEFAULT) -> np.ndarray:
    """Fréchet derivative of exp at ``A`` in direction ``E``.

    Read off the upper-right block of ``exp([[A, E], [0, A]])``.
    """
    A = np.asarray(A, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    _check_finite(A)
    _check_finite(E)
    n = A.shape[-1]
    M = np.zeros(A.shape[:-2] + (2 * n, 2 * n))
    M[..., :n, :n] = A
    M[..., n:, n:] = A
    M[..., :n, n:] = E
    return expm(M, cfg)[..., :n, n:]


def expm_vjp(A, upstream, cfg: MatExpConfig = DEFAULT) -> np.ndarray:
    """Gradient of ``<upstream, expm(A)>`` with respect to ``A``.

    Uses ``<U, L(A, E)> = <L(A^T, U), E>`` so a single augmented exponential
    per matrix suffices.
    """
    A = np.asarray(A, dtype=np.float64)
    return frechet(np.swapaxes(A, -1, -2), upstream, cfg)
