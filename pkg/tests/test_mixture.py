import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compshift.mixture import (GaussianMap, MixtureModel, gating, gaussian_log_density, joint_component_likelihood,
                               load_model, predict, sample_log_likelihood, save_model)
from compshift.neural import MlpConfig, MlpParams, mlp_init
from compshift.numeric import make_rng, stable_softmax


def random_model(seed, K=3, d=2, hidden=5, sigma=0.3):
    rng = make_rng(seed)
    h = mlp_init(MlpConfig(d, hidden, K), rng)
    v = GaussianMap(rng.standard_normal((K, d)), 0.3 * rng.standard_normal((K, d)))
    return MixtureModel(h, v, sigma)


def bias_heads(values, d=1):
    """An MLP whose output is the constant vector ``values``."""
    K = len(values)
    return MlpParams([np.zeros((2, d)), np.zeros((2, 2)), np.zeros((K, 2))],
                     [np.zeros(2), np.zeros(2), np.asarray(values, dtype=float)])


def flat_map(K, d=1):
    return GaussianMap(np.zeros((K, d)), np.zeros((K, d)))


def direct_normal_logpdf(x, c, s):
    # literal diagonal normal density, then log
    dens = np.prod(np.exp(-((x - c) ** 2) / (2 * s**2)) / np.sqrt(2 * np.pi * s**2))
    return np.log(dens)


def test_log_density_at_center():
    g = GaussianMap(np.array([[1.0, -2.0]]), np.zeros((1, 2)))
    assert gaussian_log_density(g, [1.0, -2.0])[0] == pytest.approx(-np.log(2 * np.pi), abs=1e-14)


def test_log_density_doubling_scale():
    a = GaussianMap(np.zeros((1, 1)), np.zeros((1, 1)))
    b = GaussianMap(np.zeros((1, 1)), np.full((1, 1), np.log(2.0)))
    assert gaussian_log_density(a, [0.0])[0] - gaussian_log_density(b, [0.0])[0] == pytest.approx(np.log(2))


@given(st.integers(0, 10_000))
def test_log_density_matches_direct(seed):
    rng = make_rng(seed)
    c, ls, x = rng.standard_normal((3, 4)), 0.5 * rng.standard_normal((3, 4)), rng.standard_normal(4)
    got = gaussian_log_density(GaussianMap(c, ls), x)
    want = [direct_normal_logpdf(x, c[k], np.exp(ls[k])) for k in range(3)]
    np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.invariant
@given(st.integers(0, 10_000))
def test_log_density_coordinate_permutation(seed):
    rng = make_rng(seed)
    c, ls, x = rng.standard_normal((2, 5)), rng.standard_normal((2, 5)), rng.standard_normal(5)
    perm = rng.permutation(5)
    a = gaussian_log_density(GaussianMap(c, ls), x)
    b = gaussian_log_density(GaussianMap(c[:, perm], ls[:, perm]), x[perm])
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_log_density_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_log_density(flat_map(2, 2), np.ones(3))


def test_model_validation():
    with pytest.raises(ValueError):
        MixtureModel(bias_heads([1.0, 2.0]), flat_map(2), 0.0)
    with pytest.raises(ValueError):
        MixtureModel(bias_heads([1.0, 2.0, 3.0]), flat_map(2), 1.0)


def test_predict_uniform_mixing():
    m = MixtureModel(bias_heads([1.0, 3.0]), flat_map(2), 1.0)
    assert predict(m, np.zeros(2), [0.4]) == pytest.approx(2.0, abs=1e-14)


def test_predict_saturates():
    m = MixtureModel(bias_heads([1.0, 3.0, -4.0]), flat_map(3), 1.0)
    assert predict(m, np.array([50.0, 0.0, 0.0]), [0.2]) == pytest.approx(1.0, abs=1e-6)


def test_predict_wrong_u_length():
    m = MixtureModel(bias_heads([1.0, 3.0]), flat_map(2), 1.0)
    with pytest.raises(ValueError):
        predict(m, np.zeros(3), [0.0])


def test_predict_convexity_sweep():
    rng = make_rng(99)
    m = random_model(1, K=4)
    x = 2 * rng.standard_normal((1000, 2))
    u = 3 * rng.standard_normal((1000, 4))
    f = predict(m, u, x)
    h = m.heads(x)
    assert np.all(f >= h.min(axis=1) - 1e-12) and np.all(f <= h.max(axis=1) + 1e-12)


@pytest.mark.invariant
@given(st.integers(0, 10_000))
def test_gating_factorization(seed):
    rng = make_rng(seed)
    m = random_model(seed % 50)
    u, x = 2 * rng.standard_normal(3), rng.standard_normal(2)
    a, b = stable_softmax(u), stable_softmax(m.log_density(x))
    np.testing.assert_allclose(gating(m, u, x), a * b / np.sum(a * b), atol=1e-10)


def test_joint_likelihood_transcription():
    rng = make_rng(5)
    m = random_model(2)
    for _ in range(20):
        u, x, y = rng.standard_normal(3), rng.standard_normal(2), float(rng.standard_normal())
        h, g = m.heads(x), gating(m, u, x)
        want = np.exp(-((y - h) ** 2) / (2 * m.sigma**2)) / np.sqrt(2 * np.pi * m.sigma**2) * g
        np.testing.assert_allclose(joint_component_likelihood(m, u, x, y), want, rtol=1e-12, atol=1e-300)
        assert np.log(want.sum()) == pytest.approx(sample_log_likelihood(m, u, x, y), abs=1e-12)


def test_joint_likelihood_exact_head_wins():
    m = MixtureModel(bias_heads([0.0, 1.0, 2.5]), flat_map(3), 0.5)
    assert np.argmax(joint_component_likelihood(m, np.zeros(3), [0.0], 1.0)) == 1


def test_log_likelihood_perfect_fit():
    m = MixtureModel(bias_heads([0.7, 0.7]), GaussianMap(np.array([[0.0], [3.0]]), np.zeros((2, 1))), 1.0)
    assert sample_log_likelihood(m, np.array([1.0, -2.0]), [0.5], 0.7) == pytest.approx(-0.5 * np.log(2 * np.pi))


@given(st.floats(0.0, 5.0), st.floats(0.0, 1.0))
def test_log_likelihood_monotone_in_fit(gap, shrink):
    far = MixtureModel(bias_heads([gap, -1.0]), flat_map(2), 0.4)
    near = MixtureModel(bias_heads([gap * shrink, -1.0]), flat_map(2), 0.4)
    assert sample_log_likelihood(near, np.zeros(2), [0.0], 0.0) >= sample_log_likelihood(far, np.zeros(2), [0.0], 0.0)


@pytest.mark.invariant
@pytest.mark.parametrize("k_sigma", [40.0, 50.0])
def test_log_likelihood_finite_far_out(k_sigma):
    m = MixtureModel(bias_heads([0.0, 0.0]), flat_map(2), 1.0)
    ll = sample_log_likelihood(m, np.zeros(2), [0.0], k_sigma)
    assert np.isfinite(ll)
    assert ll == pytest.approx(-0.5 * k_sigma**2 - 0.5 * np.log(2 * np.pi), abs=1e-9)
    with np.errstate(under="ignore", divide="ignore"):
        # the naive route underflows to -inf at 40 sigma
        naive = np.log(joint_component_likelihood(m, np.zeros(2), [0.0], k_sigma).sum())
    assert naive == -np.inf


def test_batched_calls_match_single():
    m = random_model(3)
    rng = make_rng(4)
    x, u, y = rng.standard_normal((6, 2)), rng.standard_normal((6, 3)), rng.standard_normal(6)
    np.testing.assert_allclose(predict(m, u, x), [predict(m, u[i], x[i]) for i in range(6)], atol=1e-14)
    np.testing.assert_allclose(sample_log_likelihood(m, u, x, y),
                               [sample_log_likelihood(m, u[i], x[i], y[i]) for i in range(6)], atol=1e-14)


def test_model_round_trip(tmp_path):
    m = random_model(8)
    save_model(m, tmp_path / "m.json", {"note": "x"})
    back, payload = load_model(tmp_path / "m.json")
    assert payload["note"] == "x"
    x = make_rng(1).standard_normal((5, 2))
    np.testing.assert_array_equal(predict(back, np.ones(3), x), predict(m, np.ones(3), x))
