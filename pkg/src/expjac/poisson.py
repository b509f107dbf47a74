"""Dirichlet Poisson solver diagonalised by the type-I discrete sine transform.

On an ``N_0 x ... x N_{d-1}`` grid with zero values outside, a volume is
expanded as

    u[i, j, k] = sum_{l,m,n} a[l, m, n] sin(i l pi/(N_0+1)) sin(j m pi/(N_1+1)) sin(k n pi/(N_2+1))

with 1-based indices.  :func:`dst_forward` returns the coefficients ``a``
(the analysis carries the ``prod 2/(N+1)`` normalisation), :func:`dst_inverse`
is the plain synthesis sum, and each sine mode is an eigenvector of
:func:`expjac.diffops.discrete_laplacian` with eigenvalue ``-lambda_lmn``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from expjac.errors import NonFiniteInput, PlanMismatch

# axes shorter than this use the dense sine matrix instead of the FFT path
DIRECT_MAX = 8


def sine_matrix(n: int) -> np.ndarray:
    k = np.arange(1, n + 1)
    return np.sin(np.pi * np.outer(k, k) / (n + 1))


def axis_eigenvalues(n: int) -> np.ndarray:
    return 2.0 - 2.0 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))


def dst1_fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised DST-I along ``axis`` via an odd extension of length 2(N+1)."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    n = x.shape[-1]
    ext = np.zeros(x.shape[:-1] + (2 * (n + 1),))
    ext[..., 1:n + 1] = x
    ext[..., n + 2:] = -x[..., ::-1]
    y = -0.5 * np.fft.rfft(ext, axis=-1).imag[..., 1:n + 1]
    return np.moveaxis(y, -1, axis)


def dst1_direct(x: np.ndarray, axis: int = -1, matrix: np.ndarray | None = None) -> np.ndarray:
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    S = sine_matrix(x.shape[-1]) if matrix is None else matrix
    return np.moveaxis(x @ S.T, -1, axis)


@dataclass(frozen=True)
class DstPlan:
    """Immutable per-shape data: dense sine matrices for short axes and the
    per-axis eigenvalue lists.  Safe to share between threads."""

    shape: tuple[int, ...]
    eigenvalues: tuple[np.ndarray, ...] = field(init=False, repr=False)
    matrices: tuple[np.ndarray | None, ...] = field(init=False, repr=False)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if not shape or any(n < 1 for n in shape):
            raise ValueError(f"invalid plan shape {shape}")
        eig = []
        mats = []
        for n in shape:
            e = axis_eigenvalues(n)
            e.setflags(write=False)
            eig.append(e)
            if n < DIRECT_MAX:
                m = sine_matrix(n)
                m.setflags(write=False)
                mats.append(m)
            else:
                mats.append(None)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "eigenvalues", tuple(eig))
        object.__setattr__(self, "matrices", tuple(mats))

    def lam(self) -> np.ndarray:
        """Combined eigenvalues ``lambda_lmn`` (all strictly positive)."""
        total = np.zeros(self.shape)
        for ax, e in enumerate(self.eigenvalues):
            view = [1] * len(self.shape)
            view[ax] = -1
            total = total + e.reshape(view)
        return total

    def check(self, arr: np.ndarray):
        if tuple(arr.shape) != self.shape:
            raise PlanMismatch(f"plan is for shape {self.shape}, got {tuple(arr.shape)}")

    def transform(self, arr: np.ndarray) -> np.ndarray:
        """Unnormalised separable DST-I over every axis."""
        out = np.asarray(arr, dtype=float)
        for ax, m in enumerate(self.matrices):
            out = dst1_direct(out, ax, m) if m is not None else dst1_fft(out, ax)
        return out


def _plan_for(arr, plan):
    if plan is None:
        return DstPlan(np.shape(arr))
    return plan


def dst_forward(u: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    plan = _plan_for(u, plan)
    plan.check(u)
    scale = np.prod([2.0 / (n + 1) for n in plan.shape])
    return scale * plan.transform(u)


def dst_inverse(a: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    plan = _plan_for(a, plan)
    plan.check(a)
    return plan.transform(a)


def solve_poisson(f: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    """Solve ``discrete_laplacian(u) == f`` with zero values outside the grid."""
    f = np.asarray(f, dtype=float)
    plan = _plan_for(f, plan)
    plan.check(f)
    if not np.isfinite(f).all():
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(f))[0])
        raise NonFiniteInput(f"non-finite right-hand side at {bad}", voxel=bad)
    lam = plan.lam()
    assert (lam > 0).all()
    return dst_inverse(dst_forward(f, plan) / -lam, plan)


def solve_poisson_vjp(upstream: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    """The solve operator is symmetric, so its VJP is another solve."""
    return solve_poisson(upstream, plan)
