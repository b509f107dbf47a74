"""The postprocessing layer: phi -> Jac(phi) -> expm -> Poisson reconstruction.

Each output component ``phi_p[t]`` solves ``Lap(phi_p[t]) = div(row t of
expm(Jac(phi)))`` on the interior of the grid, with the outer ring of voxels
held at exactly zero.  The central-difference divergence used here is the
negative adjoint of forward differences applied to the edge-averaged target
matrices, so the solve is the exact least-squares fit of forward-difference
gradients to those averages.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from expjac import diffops
from expjac.diffops import StencilScheme
from expjac.errors import ShapeMismatch
from expjac.fields import DisplacementField, as_components
from expjac.matexp import MatExpConfig, expm_field, expm_vjp
from expjac.poisson import DstPlan, solve_poisson

REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class PostprocessConfig:
    matexp: MatExpConfig = field(default_factory=MatExpConfig)
    stencil: StencilScheme = field(default_factory=StencilScheme)
    record_intermediates: bool = False
    # "sum" is the reconstruction loss as written; "mean" divides by the voxel count
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


@dataclass(frozen=True)
class LayerOutput:
    phi_p: DisplacementField
    loss_p: float
    J_prime: np.ndarray | None = None
    timings: dict = field(default_factory=dict)


def _interior(ndim: int):
    return (slice(1, -1),) * ndim


def interior_plan(dims) -> DstPlan:
    return DstPlan(tuple(n - 2 for n in dims))


def reconstruct(J_prime: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    """Poisson-reconstruct a zero-boundary field from a matrix field ``(*dims, d, d)``."""
    dims = J_prime.shape[:-2]
    plan = plan or interior_plan(dims)
    rhs = diffops.divergence_rows(J_prime)
    inner = _interior(len(dims))
    out = np.zeros(rhs.shape)
    for t in range(rhs.shape[0]):
        out[t][inner] = solve_poisson(rhs[t][inner], plan)
    return out


def reconstruct_adjoint(w: np.ndarray, plan: DstPlan | None = None) -> np.ndarray:
    """Transpose of :func:`reconstruct`: field cotangent -> matrix-field cotangent."""
    dims = w.shape[1:]
    plan = plan or interior_plan(dims)
    inner = _interior(len(dims))
    rhs_bar = np.zeros(w.shape)
    for t in range(w.shape[0]):
        rhs_bar[t][inner] = solve_poisson(w[t][inner], plan)
    return diffops.divergence_rows_adjoint(rhs_bar)


def _reduce(per_voxel: np.ndarray, reduction: str) -> float:
    flat = np.ascontiguousarray(per_voxel).ravel()
    total = float(np.sum(flat))  # numpy's pairwise summation: order is fixed
    return total / flat.size if reduction == "mean" else total


def loss_from_parts(J_prime: np.ndarray, phi_p: np.ndarray, reduction: str = "sum") -> float:
    resid = J_prime - diffops.jacobian(phi_p)
    return _reduce(np.sum(resid * resid, axis=(-2, -1)), reduction)


def loss_p(phi, phi_p, cfg: PostprocessConfig | None = None) -> float:
    """Sum over voxels of ``||expm(Jac(phi)) - Jac(phi_p)||_F^2``."""
    cfg = cfg or PostprocessConfig()
    a, b = as_components(phi), as_components(phi_p)
    if a.shape != b.shape:
        raise ShapeMismatch(f"phi {a.shape} vs phi_p {b.shape}")
    J_prime = expm_field(diffops.jacobian(a.astype(np.float64)), cfg.matexp)
    return loss_from_parts(J_prime, b.astype(np.float64), cfg.reduction)


def postprocess(phi, cfg: PostprocessConfig | None = None) -> LayerOutput:
    cfg = cfg or PostprocessConfig()
    src = phi if isinstance(phi, DisplacementField) else DisplacementField(np.asarray(phi))
    comps = src.components.astype(np.float64)
    timings = {}

    t0 = time.perf_counter()
    J = diffops.jacobian(comps)
    t1 = time.perf_counter()
    J_prime = expm_field(J, cfg.matexp)
    t2 = time.perf_counter()
    phi_p = reconstruct(J_prime)
    t3 = time.perf_counter()
    lp = loss_from_parts(J_prime, phi_p, cfg.reduction)
    t4 = time.perf_counter()
    timings.update(jacobian=t1 - t0, expm=t2 - t1, poisson=t3 - t2, loss=t4 - t3, total=t4 - t0)

    out_field = DisplacementField(
        phi_p.astype(src.dtype), spacing=src.spacing, boundary_zero=True
    )
    return LayerOutput(
        phi_p=out_field,
        loss_p=lp,
        J_prime=J_prime if cfg.record_intermediates else None,
        timings=timings,
    )


def postprocess_vjp(phi, upstream_phi_p=None, upstream_loss: float = 0.0,
                    cfg: PostprocessConfig | None = None) -> np.ndarray:
    """Gradient of ``<upstream_phi_p, phi_p> + upstream_loss * loss_p`` w.r.t. ``phi``.

    Returns an array shaped like ``phi``'s components.
    """
    cfg = cfg or PostprocessConfig()
    comps = as_components(phi).astype(np.float64)
    dims = comps.shape[1:]
    plan = interior_plan(dims)

    J = diffops.jacobian(comps)
    J_prime = expm_field(J, cfg.matexp)
    phi_p = reconstruct(J_prime, plan)

    phi_p_bar = np.zeros_like(comps) if upstream_phi_p is None else np.array(
        as_components(upstream_phi_p), dtype=np.float64)
    if phi_p_bar.shape != comps.shape:
        raise ShapeMismatch(f"upstream {phi_p_bar.shape} vs phi {comps.shape}")
    J_prime_bar = np.zeros_like(J_prime)
    if upstream_loss:
        scale = 2.0 * upstream_loss
        if cfg.reduction == "mean":
            scale /= np.prod(dims)
        resid = J_prime - diffops.jacobian(phi_p)
        J_prime_bar += scale * resid
        phi_p_bar -= scale * diffops.jacobian_adjoint(resid)

    J_prime_bar += reconstruct_adjoint(phi_p_bar, plan)
    J_bar = expm_vjp(J, J_prime_bar, cfg.matexp)
    grad = diffops.jacobian_adjoint(J_bar)
    return grad
