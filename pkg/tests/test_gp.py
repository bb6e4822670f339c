import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpclf.gp import (CheckpointMismatch, StructuredPosterior, TrainingSet, UCBConfig, beta,
                      beta_formula, fit, information_gain_greedy, load_checkpoint,
                      log_marginal_likelihood, posterior_adp, posterior_adp_batch, posterior_generic,
                      predict, sample_prior, save_checkpoint, socp_factors, train_hyperparams)
from gpclf.kernels import ADPKernel, SEKernel, augment, eval_adp

from conftest import random_kernel, random_model


def test_empty_model_is_prior():
    kc = ADPKernel((SEKernel(1.5, (1.0, 1.0)), SEKernel(0.5, (2.0, 2.0))))
    model = fit(kc, TrainingSet.empty(2, 2, 0.1))
    post = posterior_adp(model, [0.3, -0.2])
    assert np.all(post.b == 0)
    assert np.allclose(post.C, np.diag([1.5, 0.5]), atol=1e-15)
    mu, var = posterior_generic(model, [0.3, -0.2], [1.0, 2.0])
    assert mu == 0.0
    assert var == pytest.approx(eval_adp(kc, [0.3, -0.2], [1, 2], [0.3, -0.2], [1, 2]), rel=1e-14)


def test_single_point_noiseless_interpolation():
    kc = ADPKernel.isotropic(2, 1)
    model = fit(kc, TrainingSet([[0.4]], [[1.0, 0.7]], [1.3], 1e-8))
    mu, _ = posterior_generic(model, [0.4], [1.0, 0.7])
    assert mu == pytest.approx(1.3, abs=1e-6)


def test_fitted_model_reproduces_training_labels():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(10, 1))
    U = rng.uniform(-1, 1, size=(10, 1))
    z = np.sin(X[:, 0]) + 0.5 * np.cos(X[:, 0]) * U[:, 0] + 0.05 * rng.standard_normal(10)
    data = TrainingSet.from_inputs(X, U, z, 0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tr = train_hyperparams(ADPKernel.isotropic(2, 1), data, restarts=4, seed=0)
    model = fit(tr.kernel, data.with_noise(tr.noise_std))
    mu, _ = predict(model, X, augment(U))
    assert np.max(np.abs(mu - z)) <= 3 * tr.noise_std


def test_fit_is_deterministic():
    rng = np.random.default_rng(4)
    m1, m2 = random_model(np.random.default_rng(4)), random_model(rng)
    assert np.array_equal(m1.alpha, m2.alpha)


def test_far_query_reverts_to_prior():
    rng = np.random.default_rng(5)
    model = random_model(rng, p=2, n=2)
    x, y = np.array([1e3, -1e3]), np.array([1.0, 0.5])
    mu, var = posterior_generic(model, x, y)
    assert abs(mu) < 1e-6
    assert var == pytest.approx(eval_adp(model.kernel, x, y, x, y), abs=1e-6)


def test_structured_matches_generic_20_instances():
    rng = np.random.default_rng(6)
    model = random_model(rng, p=3, n=2, N=25)
    worst = 0.0
    for _ in range(20):
        x, y = rng.normal(size=2), np.append(1.0, rng.normal(size=2) * 2)
        post = posterior_adp(model, x)
        mu, var = posterior_generic(model, x, y)
        worst = max(worst, abs(post.mean(y) - mu), abs(y @ post.C @ y - var))
    assert worst < 1e-10


def test_structured_mean_is_linear():
    rng = np.random.default_rng(7)
    post = posterior_adp(random_model(rng, p=3), rng.normal(size=2))
    y1, y2 = rng.normal(size=3), rng.normal(size=3)
    assert post.mean(2.5 * y1 - 0.3 * y2) == pytest.approx(2.5 * post.mean(y1) - 0.3 * post.mean(y2),
                                                          abs=1e-12)


def test_batch_matches_single_queries():
    rng = np.random.default_rng(8)
    model = random_model(rng)
    Xq = rng.normal(size=(5, 2))
    b, C = posterior_adp_batch(model, Xq)
    for i, x in enumerate(Xq):
        post = posterior_adp(model, x)
        assert np.allclose(post.b, b[i], atol=1e-14) and np.allclose(post.C, C[i], atol=1e-14)


def test_socp_factors_zero_covariance():
    M, n = socp_factors(StructuredPosterior(np.zeros(2), np.zeros((2, 2))))
    assert np.all(M == 0) and np.all(n == 0)


def test_socp_factors_identity():
    M, n = socp_factors(StructuredPosterior(np.zeros(2), np.eye(2)))
    for u in (-3.0, 0.0, 0.5, 7.0):
        assert np.sum((M @ [u] + n) ** 2) == pytest.approx(1 + u * u, rel=1e-15)


def test_socp_factors_reconstruct_random_psd():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(3, 3))
    C = A @ A.T
    M, n = socp_factors(StructuredPosterior(np.zeros(3), C))
    for u in rng.normal(size=(50, 2)) * 3:
        y = np.append(1.0, u)
        assert abs(np.sum((M @ u + n) ** 2) - y @ C @ y) < 1e-9 * max(1.0, y @ C @ y)


def test_socp_factors_reject_indefinite():
    with pytest.raises(ValueError):
        socp_factors(StructuredPosterior(np.zeros(2), np.diag([1.0, -0.5])))


def _se_data(rng, N=200, ell=1.0, sf=1.0, sn=0.1):
    X = rng.uniform(-5, 5, size=(N, 1))
    kern = ADPKernel((SEKernel(sf, (ell,)),))
    f = sample_prior(kern, X, np.ones((N, 1)), rng)
    return TrainingSet(X, np.ones((N, 1)), f + sn * rng.standard_normal(N), sn)


def test_training_recovers_lengthscale():
    data = _se_data(np.random.default_rng(10))
    start = ADPKernel((SEKernel(0.5, (3.0,)),))
    tr = train_hyperparams(start, data.with_noise(0.3), restarts=8, seed=0)
    ell = tr.kernel.base_kernels[0].lengthscales[0]
    assert 0.7 <= ell <= 1.3
    assert tr.lml == max([tr.initial_lml] + tr.restart_lmls)


def test_lml_peaks_near_generating_noise():
    data = _se_data(np.random.default_rng(11))
    kern = ADPKernel((SEKernel(1.0, (1.0,)),))
    ref = log_marginal_likelihood(kern, data.with_noise(0.1))
    assert log_marginal_likelihood(kern, data.with_noise(1.0)) < ref
    assert log_marginal_likelihood(kern, data.with_noise(0.005)) < ref


def test_lml_finite_for_duplicate_inputs():
    data = TrainingSet([[0.0], [0.0]], [[1.0], [1.0]], [1.0, -1.0], 0.1)
    assert np.isfinite(log_marginal_likelihood(ADPKernel.isotropic(1, 1), data))


def test_training_is_deterministic():
    data = _se_data(np.random.default_rng(12), N=50)
    a = train_hyperparams(ADPKernel.isotropic(1, 1), data, restarts=3, seed=5)
    b = train_hyperparams(ADPKernel.isotropic(1, 1), data, restarts=3, seed=5)
    assert np.array_equal(a.kernel.to_theta(), b.kernel.to_theta()) and a.noise_std == b.noise_std


def test_training_rejects_too_little_data():
    with pytest.raises(ValueError):
        train_hyperparams(ADPKernel.isotropic(1, 1), TrainingSet([[0.0]], [[1.0]], [0.0], 0.1))


def test_beta_override():
    cfg = UCBConfig(beta_override=2.0)
    assert all(beta(cfg, N) == 2.0 for N in (0, 1, 100, 10 ** 6))


def test_beta_with_zero_gain_is_sqrt2():
    cfg = UCBConfig(delta=0.05, rkhs_bound=1.0, gamma=0.0, beta_override=None)
    for N in (0, 9, 1000):
        assert beta(cfg, N) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_beta_formula_direct():
    cfg = UCBConfig(delta=0.05, rkhs_bound=1.0, gamma=1.0, beta_override=None)
    assert beta(cfg, 9) == pytest.approx(math.sqrt(2 + 300 * math.log(200.0) ** 3), rel=1e-14)


def test_beta_monotone():
    vals = [beta_formula(1.0, 2.0, N, 0.05) for N in range(0, 200, 7)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert beta_formula(1.0, 2.0, 10, 0.01) >= beta_formula(1.0, 2.0, 10, 0.1)


@pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=1.0), dict(rkhs_bound=0.0),
                                dict(gamma_mode="exact")])
def test_ucb_config_rejects(kw):
    with pytest.raises(ValueError):
        UCBConfig(**kw)


def test_greedy_information_gain_grows():
    rng = np.random.default_rng(13)
    kc = ADPKernel.isotropic(2, 1)
    X, Y = rng.normal(size=(30, 1)), augment(rng.normal(size=(30, 1)))
    g = [information_gain_greedy(kc, X, Y, 0.1, T) for T in (1, 5, 20)]
    assert 0 < g[0] < g[1] < g[2]
    model = fit(kc, TrainingSet(X, Y, np.zeros(30), 0.1))
    assert beta(UCBConfig(gamma_mode="greedy-approx", beta_override=None), 30, model) > math.sqrt(2)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = random_model(np.random.default_rng(14))
    path = str(tmp_path / "m.npz")
    save_checkpoint(path, model, "abc")
    back, h = load_checkpoint(path, "abc")
    assert h == "abc"
    Xq = np.random.default_rng(15).normal(size=(10, 2))
    b1, C1 = posterior_adp_batch(model, Xq)
    b2, C2 = posterior_adp_batch(back, Xq)
    assert np.array_equal(b1, b2) and np.array_equal(C1, C2)


def test_checkpoint_hash_mismatch(tmp_path):
    model = random_model(np.random.default_rng(16))
    path = str(tmp_path / "m.npz")
    save_checkpoint(path, model, "abc")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, "xyz")
    load_checkpoint(path, "xyz", override=True)


# -- properties ---------------------------------------------------------------

seeds = st.integers(0, 10 ** 6)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(0, 30))
def test_structured_equals_generic_property(seed, p, N):
    rng = np.random.default_rng(seed)
    model = random_model(rng, p=p, n=2, N=N) if N else fit(random_kernel(rng, p, 2),
                                                          TrainingSet.empty(2, p, 0.1))
    x, y = rng.normal(size=2), np.append(1.0, rng.normal(size=p - 1))
    post = posterior_adp(model, x)
    mu, var = posterior_generic(model, x, y)
    assert abs(post.mean(y) - mu) < 1e-10
    assert abs(y @ post.C @ y - var) < 1e-10 or var == 0.0
    assert y @ post.C @ y >= -1e-9
    assert post.variance(y) >= 0.0


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_variance_bounded_by_prior(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, p=2, N=15)
    x, y = rng.normal(size=2), np.append(1.0, rng.normal(size=1))
    prior = eval_adp(model.kernel, x, y, x, y)
    assert posterior_adp(model, x).variance(y) <= prior + 1e-10


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_more_data_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, p=2, N=12)
    extra = TrainingSet(rng.normal(size=(1, 2)), [[1.0, rng.normal()]], [rng.normal()], model.data.noise_std)
    bigger = fit(model.kernel, model.data.extend(extra))
    x, y = rng.normal(size=2), np.append(1.0, rng.normal(size=1))
    assert posterior_adp(bigger, x).variance(y) <= posterior_adp(model, x).variance(y) + 1e-10


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_mean_affine_and_variance_quadratic_along_rays(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, p=3, N=10)
    x = rng.normal(size=2)
    post = posterior_adp(model, x)
    y0, d = np.append(1.0, rng.normal(size=2)), np.append(0.0, rng.normal(size=2))
    ts = np.linspace(-2, 2, 7)
    mus = [posterior_generic(model, x, y0 + t * d)[0] for t in ts]
    vs = [(y0 + t * d) @ post.C @ (y0 + t * d) for t in ts]
    c1 = np.polyfit(ts, mus, 1)
    c2 = np.polyfit(ts, vs, 2)
    assert np.max(np.abs(np.polyval(c1, ts) - mus)) < 1e-10
    assert np.max(np.abs(np.polyval(c2, ts) - vs)) < 1e-10
