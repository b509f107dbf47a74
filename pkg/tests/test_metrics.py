import json
from importlib import resources

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import map_coordinates

from expjac.errors import ShapeMismatch, UnknownStructure
from expjac.metrics import (MetricsReport, dice, determinants, evaluate, interpolate,
                            npj_percentages, warp)


def test_dice_identical_and_disjoint():
    a = np.zeros((6, 6), int)
    a[1:3, 1:3] = 1
    b = np.zeros((6, 6), int)
    b[4:6, 4:6] = 1
    assert dice(a, a, 1) == 1.0
    assert dice(a, b, 1) == 0.0


def test_dice_hand_counted():
    # |A| = 4, |B| = 4, |A & B| = 2  ->  2*2 / 8
    a = np.zeros((4, 4), int)
    b = np.zeros((4, 4), int)
    a[0, 0:4] = 3
    b[0, 2:4] = 3
    b[1, 0:2] = 3
    assert dice(a, b, 3) == 0.5


def test_dice_empty_both_is_one():
    z = np.zeros((3, 3), int)
    assert dice(z, z, 7) == 1.0


def test_dice_errors():
    with pytest.raises(ShapeMismatch):
        dice(np.zeros((3, 3)), np.zeros((3, 4)), 1)
    with pytest.raises(UnknownStructure):
        dice(np.zeros((3, 3)), np.zeros((3, 3)), 5, structures=[1, 2])


@settings(max_examples=100, deadline=None)
@given(arrays(np.int8, (5, 6), elements=st.integers(0, 3)),
       arrays(np.int8, (5, 6), elements=st.integers(0, 3)))
def test_dice_symmetric_bounded_and_relabel_invariant(a, b):
    for lab in (1, 2, 3):
        v = dice(a, b, lab)
        assert v == dice(b, a, lab)
        assert 0.0 <= v <= 1.0
        assert dice(a + 10 * (a > 0), b + 10 * (b > 0), lab + 10) == v


def test_npj_identity_and_reflection():
    dims = (5, 6, 7)
    zero = np.zeros((3,) + dims)
    assert npj_percentages(zero) == (100.0, 0.0)
    # Id + phi = x-reflection: phi_0 = -2 x
    refl = zero.copy()
    refl[0] = -2.0 * np.arange(dims[0])[:, None, None]
    assert npj_percentages(refl)[1] == 100.0


def test_determinants_against_loop(rng):
    phi = rng.standard_normal((3, 5, 4, 6))
    det = determinants(phi, transform=True)
    for q in np.ndindex(5, 4, 6):
        M = np.eye(3)
        for r in range(3):
            for c in range(3):
                u = phi[r]
                n = u.shape[c]
                i = q[c]
                lo = list(q)
                hi = list(q)
                if i == 0:
                    hi[c] = 1
                    val = u[tuple(hi)] - u[q]
                elif i == n - 1:
                    lo[c] = n - 2
                    val = u[q] - u[tuple(lo)]
                else:
                    lo[c] = i - 1
                    hi[c] = i + 1
                    val = (u[tuple(hi)] - u[tuple(lo)]) / 2
                M[r, c] += val
        assert det[q] == pytest.approx(np.linalg.det(M), rel=1e-12, abs=1e-12)


def test_npj_counts_match_brute_force(rng):
    phi = rng.standard_normal((3, 6, 6, 6)) * 0.8
    det = determinants(phi, transform=True)
    brute = sum(1 for v in det.ravel() if v <= 0)
    assert npj_percentages(phi)[1] == 100.0 * brute / det.size


def test_warp_identity_and_shift(rng):
    img = rng.standard_normal((7, 8))
    labels = rng.integers(0, 4, (7, 8)).astype(np.int32)
    assert np.array_equal(warp(img, np.zeros((2, 7, 8))), img)
    assert np.array_equal(warp(labels, np.zeros((2, 7, 8))), labels)
    shift = np.zeros((2, 7, 8))
    shift[1] = 2.0
    out = warp(labels, shift)
    assert out.dtype == labels.dtype
    assert np.array_equal(out[:, :-2], labels[:, 2:])


def test_interpolate_matches_scipy(rng):
    vol = rng.standard_normal((6, 7, 5))
    hi = np.array(vol.shape)[:, None] - 1
    pts = rng.uniform(0, 1, (3, 200)) * hi
    ours = interpolate(vol, pts, order=1)
    ref = map_coordinates(vol, pts, order=1)
    assert np.abs(ours - ref).max() <= 1e-12


def test_interpolate_gradient(rng):
    vol = rng.standard_normal((6, 7))
    pts = rng.uniform(0.2, 0.8, (2, 50)) * (np.array(vol.shape)[:, None] - 1)
    # keep away from cell faces where the linear interpolant has kinks
    pts = np.floor(pts) + 0.1 + 0.8 * (pts - np.floor(pts))
    _, grad = interpolate(vol, pts, with_grad=True)
    eps = 1e-6
    for a in range(2):
        e = np.zeros_like(pts)
        e[a] = eps
        fd = (interpolate(vol, pts + e) - interpolate(vol, pts - e)) / (2 * eps)
        assert np.abs(fd - grad[a]).max() <= 1e-8


def test_interpolate_clamps():
    vol = np.arange(12.0).reshape(3, 4)
    out, grad = interpolate(vol, np.array([[-3.0, 5.0], [1.0, 9.0]]), with_grad=True)
    assert out.tolist() == [1.0, 11.0]
    assert grad[0].tolist() == [0.0, 0.0]
    assert grad[1, 1] == 0.0


def test_interpolate_errors():
    with pytest.raises(ShapeMismatch):
        interpolate(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        interpolate(np.zeros((3, 3)), np.zeros((2, 4)), order=3)


def test_evaluate_report(rng):
    labels = np.zeros((10, 10, 10), np.int32)
    labels[2:5, 2:5, 2:5] = 1
    labels[6:9, 6:9, 6:9] = 2
    report = evaluate(labels, labels, np.zeros((3, 10, 10, 10)), np.zeros((3, 10, 10, 10)))
    assert report.dice_per_structure == {1: 1.0, 2: 1.0}
    assert report.mean_dice == 1.0
    assert report.npj_transform_pct == 0.0
    assert report.npj_input_transform_pct == 0.0
    assert set(report.timings) == {"warp", "dice", "npj"}
    schema = json.loads(resources.files("expjac").joinpath("schemas/metrics_report.json").read_text())
    jsonschema.validate(json.loads(report.to_json()), schema)


def test_evaluate_subset_and_default():
    assert MetricsReport().mean_dice == 1.0
    a = np.array([[0, 1, 1], [2, 2, 0], [0, 0, 0]])
    r = evaluate(a, a, np.zeros((2, 3, 3)), structures=[2])
    assert list(r.dice_per_structure) == [2]
