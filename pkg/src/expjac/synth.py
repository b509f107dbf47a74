"""Synthetic fields and images with known properties.

Every generator is a pure function of its arguments (including ``seed``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from expjac import diffops
from expjac.fields import DisplacementField

KINDS = ("sinusoidal_fold", "random_smooth", "harmonic_conjugate_2d", "linear", "gaussian_blob_pair")


def _window(dims: Sequence[int]) -> np.ndarray:
    """Separable sine bump, exactly 0 on the boundary and ~1 in the middle."""
    w = np.ones(tuple(dims))
    for ax, n in enumerate(dims):
        prof = np.sin(np.pi * np.arange(n) / (n - 1))
        prof[0] = prof[-1] = 0.0
        view = [1] * len(dims)
        view[ax] = n
        w = w * prof.reshape(view)
    return w


# --------------------------------------------------------------------------
# folded fields
# --------------------------------------------------------------------------

def fold_wavenumber(n: int, frequency: float) -> float:
    return 2.0 * np.pi * frequency / (n - 1)


def fold_amplitude(strength: float, n: int, frequency: float = 1.0) -> float:
    """Amplitude giving ``amplitude * wavenumber == strength`` (folds iff > 1)."""
    return strength / fold_wavenumber(n, frequency)


def _stencil_derivative_of_sine(n: int, k: float) -> np.ndarray:
    # closed-form response of the central / one-sided stencil to sin(k i)
    i = np.arange(n)
    d = np.sin(k) * np.cos(k * i)
    d[0] = np.sin(k)
    d[-1] = np.sin(k * (n - 1)) - np.sin(k * (n - 2))
    return d


def sinusoidal_fold(shape: Sequence[int], amplitude: float, frequency: float = 1.0,
                    seed: int | None = None) -> tuple[DisplacementField, int]:
    """Displacement along axis 0 only: ``a sin(k x) * window(other axes)``.

    ``k = 2 pi f / (N_0 - 1)`` so the field vanishes on both x faces for
    integer ``f``.  The transform Jacobian determinant is ``1 + d_x phi_0``,
    so folds appear iff ``a k > 1`` (up to the discrete stencil response).
    Returns the field and the closed-form count of voxels with
    ``det(I + Jac) <= 0`` under the package stencil.  ``seed`` is accepted for
    interface uniformity; the construction is deterministic.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    dims = tuple(int(n) for n in shape)
    n0 = dims[0]
    k = fold_wavenumber(n0, frequency)
    w = _window(dims[1:])
    x = np.arange(n0, dtype=np.float64)
    profile = np.sin(k * x)
    if float(frequency).is_integer():
        profile[-1] = 0.0
    comps = np.zeros((len(dims),) + dims)
    comps[0] = amplitude * profile.reshape((-1,) + (1,) * (len(dims) - 1)) * w[None]

    deriv = amplitude * _stencil_derivative_of_sine(n0, k)
    if float(frequency).is_integer():
        deriv[-1] = amplitude * (0.0 - np.sin(k * (n0 - 2)))
    det = 1.0 + deriv.reshape((-1,) + (1,) * (len(dims) - 1)) * w[None]
    folds = int(np.count_nonzero(det <= 0))
    return DisplacementField(comps, boundary_zero=float(frequency).is_integer()), folds


# --------------------------------------------------------------------------
# smooth random and linear fields
# --------------------------------------------------------------------------

def random_smooth(shape: Sequence[int], amplitude: float = 1.0, seed: int = 0,
                  sigma: float = 2.0, zero_boundary: bool = True) -> DisplacementField:
    """Gaussian-filtered noise, scaled to a peak magnitude of ``amplitude`` voxels."""
    dims = tuple(int(n) for n in shape)
    rng = np.random.default_rng(seed)
    comps = np.stack([gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect")
                      for _ in dims])
    if zero_boundary:
        comps = comps * _window(dims)[None]
    peak = np.abs(comps).max()
    if peak > 0:
        comps = comps * (amplitude / peak)
    return DisplacementField(comps, boundary_zero=zero_boundary)


def linear(shape: Sequence[int], matrix) -> DisplacementField:
    """``phi(x) = A (x - center)``; its Jacobian is ``A`` at every voxel."""
    dims = tuple(int(n) for n in shape)
    A = np.asarray(matrix, dtype=np.float64)
    grid = np.indices(dims, dtype=np.float64)
    center = (np.array(dims) - 1) / 2.0
    x = grid - center.reshape((-1,) + (1,) * len(dims))
    return DisplacementField(np.einsum("rc,c...->r...", A, x))


# --------------------------------------------------------------------------
# harmonic-conjugate (conformal) fields
# --------------------------------------------------------------------------

_PAIRS = {
    "z2": (lambda z: z ** 2, lambda z: 2 * z),
    "z3": (lambda z: z ** 3, lambda z: 3 * z ** 2),
    "exp": (np.exp, np.exp),
    "sin": (np.sin, np.cos),
}


def harmonic_conjugate_2d(shape: Sequence[int], pair: str = "z3", seed: int | None = None,
                          max_norm: float = 0.9) -> DisplacementField:
    """``phi = s (u, v) / h`` with ``u + i v = c f(z)`` analytic on ``[-1/2, 1/2]^2``.

    ``h = 1/(N - 1)`` is the grid step, stored as the field spacing, so the
    index-space Jacobian ``s * grad(u, v)`` does not depend on resolution.
    ``s`` caps the column-sum norm of the Jacobian at ``max_norm`` (series
    regime of the exponential).  A non-None ``seed`` multiplies ``f`` by a
    random unit complex number, which keeps it analytic.
    """
    dims = tuple(int(n) for n in shape)
    if len(dims) != 2:
        raise ValueError("harmonic_conjugate_2d needs a 2D shape")
    if pair not in _PAIRS:
        raise ValueError(f"unknown pair {pair!r}; choose from {sorted(_PAIRS)}")
    f, fprime = _PAIRS[pair]
    c = 1.0 + 0.0j
    if seed is not None:
        c = np.exp(1j * np.random.default_rng(seed).uniform(0, 2 * np.pi))

    ref = np.linspace(-0.5, 0.5, 257)
    zr = ref[:, None] + 1j * ref[None, :]
    g = c * fprime(zr)
    s = max_norm / np.max(np.abs(g.real) + np.abs(g.imag))

    h = tuple(1.0 / (n - 1) for n in dims)
    x = np.linspace(-0.5, 0.5, dims[0])[:, None]
    y = np.linspace(-0.5, 0.5, dims[1])[None, :]
    w = c * f(x + 1j * y)
    comps = np.stack([s * w.real / h[0], s * w.imag / h[1]])
    return DisplacementField(comps, spacing=h)


def lemma_commutation_residual(J: np.ndarray, margin: int = 2) -> float:
    """How far ``J`` is from admitting one matrix ``A`` with ``(d_c J) J = A (d_c J)`` for all c.

    At every voxel ``A`` is fitted by least squares to the stacked
    conditions; the result is ``max_q ||A P - Q|| / max_q ||P|| ||J||`` over
    voxels at least ``margin`` away from the boundary, where ``P = [d_c J]``
    and ``Q = [(d_c J) J]``.  Dimensionless and independent of grid spacing;
    0 for constant fields.  The default margin of 2 keeps the one-sided
    boundary Jacobians out of every derivative stencil.
    """
    J = np.asarray(J, dtype=np.float64)
    d = J.shape[-1]
    dims = J.shape[:-2]
    P = [np.stack([np.stack([diffops.diff(J[..., r, c], ax) for c in range(d)], -1)
                   for r in range(d)], -2) for ax in range(d)]
    Pcat = np.concatenate(P, axis=-1)
    # derivatives at rounding level are zero; fitting A to them only amplifies noise
    floor = 64 * np.finfo(np.float64).eps * max(np.abs(J).max(), 1.0)
    flat = np.linalg.norm(Pcat, axis=(-2, -1)) <= floor
    Pcat[flat] = 0.0
    Q = [p @ J for p in P]
    Q = [np.where(flat[..., None, None], 0.0, q) for q in Q]
    Qcat = np.concatenate(Q, axis=-1)
    A = Qcat @ np.linalg.pinv(Pcat)
    resid = np.linalg.norm(A @ Pcat - Qcat, axis=(-2, -1))
    scale = np.linalg.norm(Pcat, axis=(-2, -1)) * np.linalg.norm(J, axis=(-2, -1))
    inner = tuple(slice(margin, n - margin) for n in dims)
    denom = scale[inner].max()
    if denom == 0:
        return 0.0
    return float(resid[inner].max() / denom)


# --------------------------------------------------------------------------
# toy registration pairs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BlobPair:
    fixed: np.ndarray
    moving: np.ndarray
    fixed_labels: np.ndarray
    moving_labels: np.ndarray
    # moving(x) == fixed(x + truth(x)) exactly
    truth: np.ndarray


def _blobs(points: np.ndarray, centers: np.ndarray, sigma: float):
    d = points.shape[0]
    vals = []
    for c in centers:
        r2 = sum((points[a] - c[a]) ** 2 for a in range(d))
        vals.append(np.exp(-r2 / (2 * sigma ** 2)))
    vals = np.stack(vals)
    image = vals.sum(axis=0)
    labels = np.where(vals.max(axis=0) > 0.5, vals.argmax(axis=0) + 1, 0).astype(np.int32)
    return image, labels


def gaussian_blob_pair(shape: Sequence[int], displacement=0.0, seed: int = 0,
                       n_blobs: int = 3, sigma: float | None = None,
                       warp_sigma: float | None = None) -> BlobPair:
    """Gaussian blobs and a warped copy, both evaluated in closed form.

    ``displacement`` is either a peak magnitude (voxels) for a smooth random
    warp that vanishes on the boundary, or a per-axis constant translation.
    Labels number the blobs 1..n where the dominant blob exceeds half its
    peak.
    """
    dims = tuple(int(n) for n in shape)
    d = len(dims)
    rng = np.random.default_rng(seed)
    sigma = sigma if sigma is not None else min(dims) / 10.0
    lo = np.array(dims) * 0.3
    hi = np.array(dims) * 0.7 - 1
    centers = rng.uniform(lo, hi, size=(n_blobs, d))
    grid = np.indices(dims, dtype=np.float64)

    if np.ndim(displacement) == 0:
        amp = float(displacement)
        if amp == 0.0:
            truth = np.zeros((d,) + dims)
        else:
            ws = warp_sigma if warp_sigma is not None else min(dims) / 8.0
            truth = random_smooth(dims, amp, seed=seed + 1, sigma=ws).components.copy()
    else:
        t = np.asarray(displacement, dtype=np.float64)
        if t.shape != (d,):
            raise ValueError(f"translation must have {d} entries")
        truth = np.broadcast_to(t.reshape((d,) + (1,) * d), (d,) + dims).copy()

    fixed, fixed_labels = _blobs(grid, centers, sigma)
    moving, moving_labels = _blobs(grid + truth, centers, sigma)
    return BlobPair(fixed, moving, fixed_labels, moving_labels, truth)


# --------------------------------------------------------------------------
# dispatch on a SynthSpec (used by the CLI)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    kind: str
    shape: tuple[int, ...]
    amplitude: float = 1.0
    frequency: float = 1.0
    seed: int = 0
    pair: str = "z3"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


def generate(spec: SynthSpec):
    if spec.kind == "sinusoidal_fold":
        return sinusoidal_fold(spec.shape, spec.amplitude, spec.frequency, spec.seed)
    if spec.kind == "random_smooth":
        return random_smooth(spec.shape, spec.amplitude, spec.seed, **spec.extra)
    if spec.kind == "harmonic_conjugate_2d":
        return harmonic_conjugate_2d(spec.shape, spec.pair, spec.seed, **spec.extra)
    if spec.kind == "linear":
        d = len(spec.shape)
        A = np.asarray(spec.extra.get("matrix", spec.amplitude * np.eye(d)))
        return linear(spec.shape, A)
    return gaussian_blob_pair(spec.shape, spec.amplitude, spec.seed, **spec.extra)
