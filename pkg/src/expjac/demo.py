"""Toy registration by direct gradient descent on a displacement field.

The optimised objective is

    sim(F, M o (Id + phi_p)) + lam * mean ||grad phi_p||^2 + lam_p * L_p

with ``phi_p = postprocess(phi)``; gradients reach ``phi`` through
:func:`expjac.postprocess.postprocess_vjp`.  No neural network is involved:
``phi`` itself is the parameter.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from expjac import diffops
from expjac.errors import NonFiniteInput, NumericalFailure, ShapeMismatch
from expjac.metrics import MetricsReport, evaluate, interpolate, npj_percentages, sample_coordinates
from expjac.postprocess import PostprocessConfig, postprocess, postprocess_vjp


@dataclass(frozen=True)
class DemoConfig:
    lam: float = 1.0
    lam_p: float = 0.01
    similarity: str = "mse"
    ncc_window: int = 9
    steps: int = 200
    lr: float = 0.1
    seed: int = 0
    # reduction of L_p; "mean" keeps lam_p comparable across grid sizes
    reduction: str = "mean"

    def __post_init__(self):
        if self.lam < 0 or self.lam_p < 0:
            raise ValueError("lam and lam_p must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.similarity not in ("mse", "ncc"):
            raise ValueError("similarity must be 'mse' or 'ncc'")
        if self.ncc_window < 1 or self.ncc_window % 2 == 0:
            raise ValueError("ncc_window must be a positive odd integer")


# --------------------------------------------------------------------------
# similarity terms: value and gradient with respect to the warped image
# --------------------------------------------------------------------------

def mse(fixed: np.ndarray, warped: np.ndarray):
    diff = warped - fixed
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _box_sum(x: np.ndarray, window: int) -> np.ndarray:
    # zero-padded window sum; symmetric, hence self-adjoint
    return uniform_filter(x, size=window, mode="constant", cval=0.0) * window ** x.ndim


def ncc(fixed: np.ndarray, warped: np.ndarray, window: int = 9, eps: float = 1e-5):
    """Negative mean local normalised cross-correlation (squared form)."""
    I, J = fixed.astype(np.float64), warped.astype(np.float64)
    n = float(window ** I.ndim)
    sI, sJ = _box_sum(I, window), _box_sum(J, window)
    sII, sJJ, sIJ = _box_sum(I * I, window), _box_sum(J * J, window), _box_sum(I * J, window)
    mI, mJ = sI / n, sJ / n
    cross = sIJ - mJ * sI
    varI = sII - mI * sI
    varJ = sJJ - mJ * sJ
    den = varI * varJ + eps
    cc = cross * cross / den
    value = -float(np.mean(cc))

    # d cc_p / d J(q) = 2 alpha_p (I(q) - mI_p) - 2 beta_p (J(q) - mJ_p), summed over windows p containing q
    alpha = cross / den
    beta = cross * cross * varI / (den * den)
    grad = (2.0 * I * _box_sum(alpha, window) - 2.0 * _box_sum(alpha * mI, window)
            - 2.0 * J * _box_sum(beta, window) + 2.0 * _box_sum(beta * mJ, window))
    return value, -grad / I.size


def regulariser(phi_p: np.ndarray):
    """``mean_q ||Jac(phi_p)(q)||_F^2`` and its gradient."""
    J = diffops.jacobian(phi_p)
    nvox = int(np.prod(J.shape[:-2]))
    return float(np.sum(J * J)) / nvox, 2.0 * diffops.jacobian_adjoint(J) / nvox


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

def objective(phi: np.ndarray, fixed: np.ndarray, moving: np.ndarray, cfg: DemoConfig,
              with_grad: bool = True):
    """Total loss, its parts, ``phi_p`` and (optionally) the gradient w.r.t. ``phi``."""
    pcfg = PostprocessConfig(reduction=cfg.reduction)
    out = postprocess(phi, pcfg)
    phi_p = out.phi_p.components.astype(np.float64)
    coords = sample_coordinates(phi_p)
    warped, dwarp = interpolate(moving, coords, order=1, with_grad=True)
    if cfg.similarity == "mse":
        sim, dsim = mse(fixed, warped)
    else:
        sim, dsim = ncc(fixed, warped, cfg.ncc_window)
    reg, dreg = regulariser(phi_p)
    parts = {"sim": sim, "reg": reg, "loss_p": out.loss_p}
    total = sim + cfg.lam * reg + cfg.lam_p * out.loss_p
    if not with_grad:
        return total, parts, phi_p, None
    phi_p_bar = dsim[None] * dwarp + cfg.lam * dreg
    grad = postprocess_vjp(phi, phi_p_bar, cfg.lam_p, pcfg)
    return total, parts, phi_p, grad


@dataclass
class DemoResult:
    phi: np.ndarray
    phi_p: np.ndarray
    trace: list = field(default_factory=list)
    report: MetricsReport | None = None

    def to_dict(self) -> dict:
        return {
            "trace": self.trace,
            "report": self.report.to_dict() if self.report else None,
        }


def register(fixed: np.ndarray, moving: np.ndarray, cfg: DemoConfig = DemoConfig(),
             fixed_labels=None, moving_labels=None, callback=None) -> DemoResult:
    """Adam on ``phi`` (zero initialisation); deterministic for fixed inputs."""
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    if fixed.shape != moving.shape:
        raise ShapeMismatch(f"fixed {fixed.shape} vs moving {moving.shape}")
    if fixed.ndim != 2:
        raise ShapeMismatch("the demo registers 2D images")

    phi = np.zeros((fixed.ndim,) + fixed.shape)
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    trace = []
    t_start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        try:
            total, parts, _, grad = objective(phi, fixed, moving, cfg)
        except NonFiniteInput as exc:
            raise NumericalFailure(f"non-finite values at step {step}: {exc}") from exc
        if not (math.isfinite(total) and np.isfinite(grad).all()):
            raise NumericalFailure(f"loss diverged at step {step}: {total}")
        trace.append({"step": step, "loss": total, **parts})
        if callback is not None:
            callback(step, total, parts)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1 ** step)
        vhat = v / (1 - b2 ** step)
        phi = phi - cfg.lr * mhat / (np.sqrt(vhat) + adam_eps)
    elapsed = time.perf_counter() - t_start

    total, parts, phi_p, _ = objective(phi, fixed, moving, cfg, with_grad=False)
    trace.append({"step": cfg.steps + 1, "loss": total, **parts})
    if fixed_labels is not None and moving_labels is not None:
        report = evaluate(fixed_labels, moving_labels, phi_p, phi)
    else:
        report = MetricsReport()
        report.npj_displacement_pct, report.npj_transform_pct = npj_percentages(phi_p)
        report.npj_input_displacement_pct, report.npj_input_transform_pct = npj_percentages(phi)
    report.timings["optimise"] = elapsed
    report.extra.update(final_similarity=parts["sim"], final_loss=total, config=asdict(cfg))
    return DemoResult(phi=phi, phi_p=phi_p, trace=trace, report=report)
