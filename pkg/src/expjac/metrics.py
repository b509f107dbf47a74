"""Registration metrics: Dice overlap, non-positive Jacobian percentages, warping."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from expjac import diffops
from expjac.diffops import StencilScheme
from expjac.errors import ShapeMismatch, UnknownStructure
from expjac.fields import as_components


def dice(a: np.ndarray, b: np.ndarray, label: int, structures: Sequence[int] | None = None) -> float:
    """``2 |A & B| / (|A| + |B|)`` for the voxels carrying ``label``.

    Two empty sets count as complete agreement (1.0).
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"label volumes differ in shape: {a.shape} vs {b.shape}")
    if structures is not None and label not in structures:
        raise UnknownStructure(label)
    A = a == label
    B = b == label
    denom = int(A.sum()) + int(B.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((A & B).sum()) / denom


def determinants(phi, transform: bool) -> np.ndarray:
    J = diffops.jacobian(as_components(phi).astype(np.float64))
    if transform:
        J = J + np.eye(J.shape[-1])
    return np.linalg.det(J)


def npj_percentages(phi, stencil: StencilScheme | None = None) -> tuple[float, float]:
    """Percent of voxels with ``det <= 0`` for ``Jac(phi)`` and for ``I + Jac(phi)``."""
    disp = determinants(phi, transform=False)
    trans = determinants(phi, transform=True)
    n = disp.size
    return 100.0 * np.count_nonzero(disp <= 0) / n, 100.0 * np.count_nonzero(trans <= 0) / n


def sample_coordinates(phi) -> np.ndarray:
    comps = as_components(phi).astype(np.float64)
    grid = np.indices(comps.shape[1:], dtype=np.float64)
    return grid + comps


def interpolate(volume: np.ndarray, coords: np.ndarray, order: int = 1, with_grad: bool = False):
    """Sample ``volume`` at fractional index ``coords`` (shape ``(d, *out)``).

    ``order=1`` is multilinear, ``order=0`` nearest neighbour; coordinates are
    clamped to the grid.  With ``with_grad`` the derivative of the linear
    interpolant with respect to each coordinate is returned as well (zero
    along axes where the coordinate was clamped).
    """
    volume = np.asarray(volume)
    d = volume.ndim
    if coords.shape[0] != d:
        raise ShapeMismatch(f"{coords.shape[0]} coordinate arrays for a {d}D volume")
    hi = np.array(volume.shape, dtype=float) - 1
    clamped = [np.clip(coords[a], 0.0, hi[a]) for a in range(d)]
    if order == 0:
        idx = tuple(np.rint(c).astype(np.intp) for c in clamped)
        return volume[idx]
    if order != 1:
        raise ValueError("order must be 0 or 1")

    base = [np.minimum(np.floor(c), hi[a] - 1).astype(np.intp) for a, c in enumerate(clamped)]
    frac = [c - b for c, b in zip(clamped, base)]
    vol = volume.astype(np.float64)
    out = np.zeros(coords.shape[1:])
    grads = [np.zeros(coords.shape[1:]) for _ in range(d)] if with_grad else None
    for corner in product((0, 1), repeat=d):
        idx = tuple(b + c for b, c in zip(base, corner))
        val = vol[idx]
        w = [f if c else 1.0 - f for f, c in zip(frac, corner)]
        out += val * np.prod(w, axis=0)
        if with_grad:
            for a in range(d):
                dw = 1.0 if corner[a] else -1.0
                others = [w[b] for b in range(d) if b != a]
                grads[a] += val * dw * (np.prod(others, axis=0) if others else 1.0)
    if not with_grad:
        return out
    for a in range(d):
        inside = (coords[a] >= 0.0) & (coords[a] <= hi[a])
        grads[a] = np.where(inside, grads[a], 0.0)
    return out, np.stack(grads)


def warp(volume: np.ndarray, phi, order: int | None = None) -> np.ndarray:
    """``out(q) = volume(q + phi(q))``; labels (integer dtype) use nearest neighbour."""
    volume = np.asarray(volume)
    comps = as_components(phi)
    if comps.shape[1:] != volume.shape:
        raise ShapeMismatch(f"volume {volume.shape} vs field {comps.shape[1:]}")
    if order is None:
        order = 0 if np.issubdtype(volume.dtype, np.integer) else 1
    out = interpolate(volume, sample_coordinates(comps), order=order)
    return out.astype(volume.dtype) if order == 0 else out


@dataclass
class MetricsReport:
    dice_per_structure: dict = field(default_factory=dict)
    mean_dice: float = 1.0
    npj_displacement_pct: float = 0.0
    npj_transform_pct: float = 0.0
    npj_input_displacement_pct: float | None = None
    npj_input_transform_pct: float | None = None
    stencil: dict = field(default_factory=lambda: StencilScheme().as_dict())
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dice_per_structure"] = {str(k): v for k, v in self.dice_per_structure.items()}
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def evaluate(fixed_labels, moving_labels, phi_p, phi=None,
             structures: Sequence[int] | None = None,
             stencil: StencilScheme | None = None) -> MetricsReport:
    """Warp ``moving_labels`` by ``Id + phi_p`` and score it against ``fixed_labels``."""
    stencil = stencil or StencilScheme()
    fixed_labels = np.asarray(fixed_labels)
    moving_labels = np.asarray(moving_labels)
    if fixed_labels.shape != moving_labels.shape:
        raise ShapeMismatch("fixed and moving label volumes differ in shape")
    if structures is None:
        structures = sorted(int(s) for s in np.union1d(np.unique(fixed_labels), np.unique(moving_labels)) if s != 0)
    timings = {}
    t0 = time.perf_counter()
    warped = warp(moving_labels, phi_p, order=0)
    t1 = time.perf_counter()
    per = {int(s): dice(fixed_labels, warped, s) for s in structures}
    t2 = time.perf_counter()
    npj_d, npj_t = npj_percentages(phi_p, stencil)
    report = MetricsReport(
        dice_per_structure=per,
        mean_dice=float(np.mean(list(per.values()))) if per else 1.0,
        npj_displacement_pct=npj_d,
        npj_transform_pct=npj_t,
        stencil=stencil.as_dict(),
    )
    if phi is not None:
        report.npj_input_displacement_pct, report.npj_input_transform_pct = npj_percentages(phi, stencil)
    t3 = time.perf_counter()
    timings.update(warp=t1 - t0, dice=t2 - t1, npj=t3 - t2)
    report.timings = timings
    return report
