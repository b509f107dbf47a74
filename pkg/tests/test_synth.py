import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expjac import synth
from expjac.diffops import jacobian
from expjac.metrics import determinants, npj_percentages


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(16, 9, 10), (32, 12, 12), (20, 20)]), st.floats(0.2, 4.0), st.sampled_from([1, 2, 3]))
def test_fold_count_matches_brute_force(shape, strength, f):
    amp = synth.fold_amplitude(strength, shape[0], f)
    fld, count = synth.sinusoidal_fold(shape, amp, f)
    assert count == int(np.count_nonzero(determinants(fld, transform=True) <= 0))


def test_fold_threshold():
    shape = (32, 16, 16)
    assert synth.sinusoidal_fold(shape, synth.fold_amplitude(0.8, 32))[1] == 0
    assert synth.sinusoidal_fold(shape, synth.fold_amplitude(1.5, 32))[1] > 0


def test_fold_field_structure():
    fld, _ = synth.sinusoidal_fold((32, 10, 10), 3.0, 2)
    comps = fld.components
    assert not comps[1:].any()
    assert fld.boundary_zero
    assert not comps[:, 0].any() and not comps[:, -1].any()
    assert not comps[:, :, 0].any() and not comps[:, :, :, -1].any()
    with pytest.raises(ValueError):
        synth.sinusoidal_fold((8, 8, 8), -1.0)


def test_random_smooth_deterministic_and_scaled():
    a = synth.random_smooth((12, 10, 9), 2.5, seed=4)
    b = synth.random_smooth((12, 10, 9), 2.5, seed=4)
    c = synth.random_smooth((12, 10, 9), 2.5, seed=5)
    assert a == b
    assert not np.array_equal(a.components, c.components)
    assert np.abs(a.components).max() == pytest.approx(2.5, rel=1e-12)
    ring = np.ones((12, 10, 9), bool)
    ring[1:-1, 1:-1, 1:-1] = False
    assert not a.components[:, ring].any()


def test_linear_jacobian_constant(rng):
    A = rng.standard_normal((3, 3))
    J = jacobian(synth.linear((5, 6, 7), A))
    assert np.abs(J - A).max() <= 1e-13


@pytest.mark.parametrize("pair", ["z2", "z3", "exp", "sin"])
def test_harmonic_jacobian_is_conformal(pair):
    fld = synth.harmonic_conjugate_2d((33, 33), pair, seed=1)
    J = jacobian(fld)[2:-2, 2:-2]
    # central differences of an analytic function keep the a/-b/b/a structure
    # up to O(h^2) truncation
    scale = np.abs(J).max()
    assert np.abs(J[..., 0, 0] - J[..., 1, 1]).max() <= 1e-2 * scale
    assert np.abs(J[..., 0, 1] + J[..., 1, 0]).max() <= 1e-2 * scale
    assert np.abs(J).sum(axis=-2).max() <= 0.9 + 1e-2


def test_harmonic_resolution_independent_jacobian():
    a = jacobian(synth.harmonic_conjugate_2d((33, 33), "exp"))[16, 16]
    b = jacobian(synth.harmonic_conjugate_2d((65, 65), "exp"))[32, 32]
    assert np.abs(a - b).max() <= 1e-3


def test_harmonic_errors():
    with pytest.raises(ValueError):
        synth.harmonic_conjugate_2d((9, 9, 9))
    with pytest.raises(ValueError):
        synth.harmonic_conjugate_2d((9, 9), "log")


def test_commutation_residual_zero_for_linear(rng):
    J = jacobian(synth.linear((9, 9), rng.standard_normal((2, 2))))
    assert synth.lemma_commutation_residual(J) == 0.0


def test_commutation_residual_large_for_generic(rng):
    fld = synth.random_smooth((24, 24), 3.0, seed=2)
    assert synth.lemma_commutation_residual(jacobian(fld)) > 1e-2


def test_blob_pair_translation_exact():
    pair = synth.gaussian_blob_pair((20, 24), displacement=(0.0, 3.0), seed=1)
    assert np.allclose(pair.moving[:, :-3], pair.fixed[:, 3:], atol=1e-14)
    assert np.array_equal(pair.moving_labels[:, :-3], pair.fixed_labels[:, 3:])


def test_blob_pair_properties():
    pair = synth.gaussian_blob_pair((32, 32), displacement=4.0, seed=7)
    assert set(np.unique(pair.fixed_labels)) <= {0, 1, 2, 3}
    assert pair.fixed_labels.max() >= 1
    assert np.abs(pair.truth).max() == pytest.approx(4.0)
    same = synth.gaussian_blob_pair((32, 32), displacement=4.0, seed=7)
    assert np.array_equal(same.moving, pair.moving)
    still = synth.gaussian_blob_pair((32, 32), seed=7)
    assert np.array_equal(still.fixed, still.moving)
    with pytest.raises(ValueError):
        synth.gaussian_blob_pair((8, 8), displacement=(1.0, 2.0, 3.0))


def test_generate_dispatch():
    spec = synth.SynthSpec("random_smooth", (8, 8, 8), amplitude=1.0, seed=3)
    assert synth.generate(spec) == synth.random_smooth((8, 8, 8), 1.0, 3)
    fld, n = synth.generate(synth.SynthSpec("sinusoidal_fold", (16, 8, 8), amplitude=5.0))
    assert n == int(np.count_nonzero(determinants(fld, True) <= 0))
    lin = synth.generate(synth.SynthSpec("linear", (5, 5), amplitude=0.5))
    assert npj_percentages(lin) == (0.0, 0.0)
    with pytest.raises(ValueError):
        synth.SynthSpec("spiral", (8, 8))
