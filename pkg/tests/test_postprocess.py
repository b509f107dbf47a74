import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expjac import synth
from expjac.diffops import curl_rows, divergence_rows, jacobian
from expjac.errors import ShapeMismatch
from expjac.fields import DisplacementField
from expjac.matexp import expm, expm_field
from expjac.metrics import npj_percentages
from expjac.postprocess import (PostprocessConfig, loss_p, postprocess, postprocess_vjp,
                                reconstruct)


def test_zero_field():
    for dims in [(6, 7, 5), (9, 4)]:
        d = len(dims)
        out = postprocess(np.zeros((d,) + dims))
        assert not out.phi_p.components.any()
        assert out.phi_p.boundary_zero
        assert out.loss_p == d * int(np.prod(dims))


def test_zero_pair_loss():
    phi = np.zeros((3, 5, 5, 5))
    assert loss_p(phi, phi) == 3 * 125
    assert loss_p(phi, phi, PostprocessConfig(reduction="mean")) == 3.0


def test_constructed_zero_loss(rng):
    for d in (2, 3):
        A = rng.uniform(-0.5, 0.5, (d, d))
        shape = (7,) * d
        phi = synth.linear(shape, A)
        phi_p = synth.linear(shape, expm(A))
        assert loss_p(phi, phi_p) <= 1e-24 * np.prod(shape)


def naive_loss(phi, phi_p):
    J = expm_field(jacobian(phi))
    Jp = jacobian(phi_p)
    total = 0.0
    for i in range(J.shape[0]):
        for j in range(J.shape[1]):
            for k in range(J.shape[2]):
                for r in range(3):
                    for c in range(3):
                        total += (J[i, j, k, r, c] - Jp[i, j, k, r, c]) ** 2
    return total


def test_loss_against_loop(rng):
    phi, phi_p = rng.standard_normal((2, 3, 8, 8, 8)) * 0.3
    ref = naive_loss(phi, phi_p)
    assert abs(loss_p(phi, phi_p) - ref) <= 1e-12 * ref


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        loss_p(np.zeros((3, 4, 4, 4)), np.zeros((3, 4, 4, 5)))


def edge_consistent(psi, rng):
    """A matrix field whose edge averages are exactly the forward differences of ``psi``."""
    d = psi.shape[0]
    dims = psi.shape[1:]
    J = np.zeros(dims + (d, d))
    for t in range(d):
        for a in range(d):
            col = np.moveaxis(J[..., t, a], a, 0)
            p = np.moveaxis(psi[t], a, 0)
            col[0] = rng.standard_normal(col.shape[1:])
            for i in range(dims[a] - 1):
                col[i + 1] = 2.0 * (p[i + 1] - p[i]) - col[i]
    return J


def test_reconstruct_exact_for_consistent_targets(rng):
    for dims in [(6, 7, 5), (8, 9)]:
        psi = rng.standard_normal((len(dims),) + dims)
        for ax in range(len(dims)):
            idx = [slice(None)] * (len(dims) + 1)
            idx[ax + 1] = 0
            psi[tuple(idx)] = 0
            idx[ax + 1] = -1
            psi[tuple(idx)] = 0
        J = edge_consistent(psi, rng)
        assert np.abs(reconstruct(J) - psi).max() <= 1e-10


@pytest.mark.parametrize("pair", ["exp", "sin"])
def test_harmonic_family_output_vanishes(pair):
    # e^J is again the matrix of an analytic function's derivative, so its rows
    # are divergence-free and the reconstruction tends to 0
    ratios, curls = [], []
    for n in (33, 65, 129):
        f = synth.harmonic_conjugate_2d((n, n), pair)
        out = postprocess(f, PostprocessConfig(record_intermediates=True))
        ratios.append(np.abs(out.phi_p.components).max() / np.abs(f.components).max())
        curls.append(np.abs(curl_rows(out.J_prime, f.spacing)[:, 2:-2, 2:-2]).max())
        div = divergence_rows(out.J_prime)[:, 2:-2, 2:-2]
        assert np.abs(div).max() <= 1e-2
    assert ratios[0] > ratios[1] > ratios[2]
    assert curls[0] > curls[1] > curls[2]


def test_fold_example_displacement_convention():
    fld, _ = synth.sinusoidal_fold((32, 32, 32), synth.fold_amplitude(1.5, 32))
    out = postprocess(fld)
    assert npj_percentages(out.phi_p)[0] < npj_percentages(fld)[0]


def test_fold_reduced_on_random_smooth():
    fld = synth.random_smooth((32, 32, 32), amplitude=4.0, seed=3, sigma=2.0)
    before = npj_percentages(fld)[1]
    assert before > 0
    assert npj_percentages(postprocess(fld).phi_p)[1] < before


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.integers(0, 2 ** 31), st.floats(0.0, 3.0))
def test_boundary_always_zero(h, w, seed, amp):
    phi = np.random.default_rng(seed).standard_normal((2, h, w)) * amp
    out = postprocess(phi).phi_p.components
    ring = np.ones((h, w), bool)
    ring[1:-1, 1:-1] = False
    assert np.all(out[:, ring] == 0.0)
    assert postprocess(phi).loss_p >= 0


def test_float32_in_float32_out(rng):
    phi = (rng.standard_normal((3, 6, 6, 6)) * 0.3).astype(np.float32)
    out = postprocess(DisplacementField(phi))
    assert out.phi_p.dtype == np.float32
    ref = postprocess(phi.astype(np.float64)).phi_p.components
    assert np.abs(out.phi_p.components - ref).max() <= 1e-5


def test_record_intermediates(rng):
    phi = rng.standard_normal((3, 5, 6, 7)) * 0.2
    assert postprocess(phi).J_prime is None
    out = postprocess(phi, PostprocessConfig(record_intermediates=True))
    assert out.J_prime.shape == (5, 6, 7, 3, 3)
    assert np.array_equal(out.J_prime, expm_field(jacobian(phi)))
    assert set(out.timings) >= {"jacobian", "expm", "poisson", "loss", "total"}


def test_reduction_validation():
    with pytest.raises(ValueError):
        PostprocessConfig(reduction="max")


def objective(phi, g, c, cfg):
    out = postprocess(phi, cfg)
    return float(np.sum(g * out.phi_p.components)) + c * out.loss_p


@pytest.mark.parametrize("dims", [(6, 6, 6), (8, 8)])
@pytest.mark.parametrize("reduction", ["sum", "mean"])
def test_vjp_finite_differences(rng, dims, reduction):
    cfg = PostprocessConfig(reduction=reduction)
    d = len(dims)
    phi = rng.standard_normal((d,) + dims) * 0.4
    g = rng.standard_normal((d,) + dims)
    c = 0.7
    grad = postprocess_vjp(phi, g, c, cfg)
    eps = 1e-6
    for _ in range(6):
        v = rng.standard_normal(phi.shape)
        fd = (objective(phi + eps * v, g, c, cfg) - objective(phi - eps * v, g, c, cfg)) / (2 * eps)
        dd = float(np.sum(grad * v))
        assert abs(dd - fd) <= 1e-5 * abs(fd)


def test_vjp_zero_upstream(rng):
    phi = rng.standard_normal((2, 6, 6))
    assert not postprocess_vjp(phi).any()
