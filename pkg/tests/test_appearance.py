import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from salientcut.appearance import (DENSITY_FLOOR, GmmFitError, GmmModel, build_models,
                                   fit_weighted_gmm, nll_map, nll_maps,
                                   systematic_resample)


def random_dataset(seed, n=400):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    centers = rng.random((k, 3))
    x = centers[rng.integers(0, k, n)] + rng.normal(0, rng.uniform(0.01, 0.2), (n, 3))
    w = rng.random(n) * (rng.random(n) < 0.8)
    w[0] = 1.0
    return x, w


def mixture_logpdf(model, x):
    comps = [np.log(wk) + stats.multivariate_normal(m, c).logpdf(x)
             for wk, m, c in zip(model.weights, model.means, model.covs)]
    return np.logaddexp.reduce(np.vstack(comps), axis=0)


def test_identical_colours_hit_ridge():
    x = np.tile([0.2, 0.4, 0.6], (50, 1))
    m = fit_weighted_gmm(x, np.ones(50), 1, seed=0)
    np.testing.assert_allclose(m.means[0], [0.2, 0.4, 0.6], atol=1e-15)
    np.testing.assert_allclose(m.covs[0], 1e-6 * np.eye(3), atol=1e-18)


def test_two_cluster_recovery():
    # [DERIVED] black/white halves with small jitter
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0.0, 0.01, (500, 3)), rng.normal(1.0, 0.01, (500, 3))])
    m = fit_weighted_gmm(x, np.ones(1000), 2, seed=3)
    order = np.argsort(m.means[:, 0])
    np.testing.assert_allclose(m.weights[order], [0.5, 0.5], atol=0.01)
    np.testing.assert_allclose(m.means[order], [[0] * 3, [1] * 3], atol=0.01)


def test_weight_scale_invariance_exact():
    x, w = random_dataset(5)
    a = fit_weighted_gmm(x, w, 3, seed=1)
    b = fit_weighted_gmm(x, 2 * w, 3, seed=1)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covs, b.covs)
    np.testing.assert_array_equal(a.weights, b.weights)


@pytest.mark.parametrize("seed", range(20))
def test_log_likelihood_non_decreasing(seed):
    x, w = random_dataset(seed)
    m = fit_weighted_gmm(x, w, 3, seed=seed)
    assert np.all(np.diff(m.log_likelihood) >= -1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_model_invariants(seed):
    x, w = random_dataset(seed, 200)
    m = fit_weighted_gmm(x, w, 3, seed=seed)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)
    for c in m.covs:
        np.testing.assert_allclose(c, c.T, atol=1e-15)
        assert np.linalg.eigvalsh(c).min() >= 1e-6 * (1 - 1e-9)


def test_deterministic_and_permutation_invariant(rng):
    x, w = random_dataset(11)
    a = fit_weighted_gmm(x, w, 3, seed=4)
    b = fit_weighted_gmm(x, w, 3, seed=4)
    np.testing.assert_array_equal(a.means, b.means)
    perm = rng.permutation(len(w))
    c = fit_weighted_gmm(x[perm], w[perm], 3, seed=4)
    assert c.log_likelihood[-1] == pytest.approx(a.log_likelihood[-1], abs=1e-7)


def test_log_density_matches_scipy(rng):
    x, w = random_dataset(2)
    m = fit_weighted_gmm(x, w, 3, seed=0)
    pts = rng.random((30, 3))
    np.testing.assert_allclose(m.log_density(pts), mixture_logpdf(m, pts), rtol=1e-10)


def test_fit_errors():
    x = np.zeros((4, 3))
    with pytest.raises(GmmFitError):
        fit_weighted_gmm(x, np.zeros(4), 1, 0)
    with pytest.raises(GmmFitError):
        fit_weighted_gmm(x, np.array([1.0, 0, 0, 0]), 2, 0)
    with pytest.raises(ValueError):
        fit_weighted_gmm(x, -np.ones(4), 1, 0)
    with pytest.raises(ValueError):
        fit_weighted_gmm(x, np.ones(3), 1, 0)


def test_fewer_distinct_colours_than_components():
    x = np.array([[0.0, 0, 0], [1, 1, 1]] * 10)
    m = fit_weighted_gmm(x, np.ones(20), 3, seed=0)
    assert m.n_components <= 2
    assert m.weights.sum() == pytest.approx(1.0)


def test_systematic_resample_mass():
    x = np.arange(5.0)[:, None]
    w = np.array([0.1, 0.2, 0.3, 0.0, 0.4])
    xs, ws = systematic_resample(x, w, 1000)
    counts = np.bincount(xs[:, 0].astype(int), weights=ws, minlength=5)
    np.testing.assert_allclose(counts / counts.sum(), w, atol=2e-3)


def test_subsampled_fit_close_to_full():
    rng = np.random.default_rng(8)
    x = np.vstack([rng.normal(0.2, 0.03, (3000, 3)), rng.normal(0.8, 0.03, (3000, 3))])
    full = fit_weighted_gmm(x, np.ones(6000), 2, seed=0, max_samples=10_000)
    sub = fit_weighted_gmm(x, np.ones(6000), 2, seed=0, max_samples=1000)
    np.testing.assert_allclose(np.sort(sub.means[:, 0]), np.sort(full.means[:, 0]), atol=0.01)


def test_nll_peak_closed_form():
    # [DERIVED] Gaussian peak density (2 pi)^(-3/2) s^(-3)
    s = 0.1
    m = GmmModel(np.array([1.0]), np.array([[0.3, 0.3, 0.3]]), np.array([s * s * np.eye(3)]))
    frame = np.full((2, 2, 3), 0.3)
    expect = -np.log((2 * np.pi) ** -1.5 * s ** -3)
    np.testing.assert_allclose(nll_map(frame, m), expect, rtol=1e-12)


def test_nll_equal_models_and_floor():
    m = GmmModel(np.array([1.0]), np.zeros((1, 3)), np.array([1e-4 * np.eye(3)]))
    frame = np.zeros((3, 3, 3))
    frame[0, 0] = 1.0
    lik = nll_maps(frame, m, m)
    np.testing.assert_array_equal(lik.obj_nll, lik.bkg_nll)
    assert lik.obj_nll[0, 0] == pytest.approx(-np.log(DENSITY_FLOOR))
    assert np.all(np.isfinite(lik.obj_nll))


def test_build_models_red_disk():
    h = w = 40
    ys, xs = np.mgrid[0:h, 0:w]
    disk = (ys - 20) ** 2 + (xs - 20) ** 2 <= 64
    frame = np.zeros((h, w, 3))
    frame[...] = [0.1, 0.1, 0.9]
    frame[disk] = [0.9, 0.1, 0.1]
    frame += np.random.default_rng(0).normal(0, 0.01, frame.shape)
    prior = np.where(disk, 0.95, 1e-6)
    obj, bkg = build_models(frame, prior, M=3, seed=0)
    top_obj = obj.means[np.argmax(obj.weights)]
    top_bkg = bkg.means[np.argmax(bkg.weights)]
    np.testing.assert_allclose(top_obj, [0.9, 0.1, 0.1], atol=0.05)
    np.testing.assert_allclose(top_bkg, [0.1, 0.1, 0.9], atol=0.05)


def test_build_models_saturated_prior():
    frame = np.random.default_rng(1).random((10, 10, 3))
    obj, bkg = build_models(frame, np.full((10, 10), 1 - 1e-6), M=3, seed=0)
    assert bkg.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_models(frame, np.full((9, 10), 0.5))
