import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from ccgp.complex import Relabeling, path, relabel, triangulated_grid
from ccgp.errors import ArgumentError, NumericError, OptimizationError
from ccgp.gp import (
    MaternFamily,
    Observation,
    Posterior,
    RDFamily,
    Targets,
    cholesky,
    evaluate,
    fit,
    nll,
    nll_and_grad,
    posterior,
    write_predictions,
)
from ccgp.kernels import MaternHyper, RDHyper, matern_kernel, rd_kernel
from ccgp.operators import operator_basis

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def random_spd(n, rng):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


def brute_force(K, obs_idx, y, noise, test_idx):
    """Condition the joint Gaussian of (f_test, y) by explicit partitioned inverse."""
    n = K.shape[0]
    S = np.eye(n)[obs_idx]
    T = np.eye(n)[test_idx]
    joint = np.block([[T @ K @ T.T, T @ K @ S.T], [S @ K @ T.T, S @ K @ S.T + noise * np.eye(len(obs_idx))]])
    a = len(test_idx)
    Saa, Sab, Sbb = joint[:a, :a], joint[:a, a:], joint[a:, a:]
    inv = np.linalg.inv(Sbb)
    return Sab @ inv @ y, Saa - Sab @ inv @ Sab.T


def test_scalar_conditioning():
    post = posterior(np.array([[1.0]]), [Observation((0, 0), 2.0)], 1.0, [(0, 0)])
    assert post.mean[0] == pytest.approx(1.0, abs=1e-15)
    assert post.var[0] == pytest.approx(0.5, abs=1e-15)


def test_interpolation_limit():
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    post = posterior(K, [Observation((0, 0), 0.7)], 1e-12, [(0, 0)])
    assert abs(post.mean[0] - 0.7) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_posterior_matches_partitioned_gaussian(seed):
    rng = np.random.default_rng(seed)
    K = random_spd(6, rng)
    obs_idx = [0, 2, 5]
    test_idx = [1, 3, 4]
    y = rng.normal(size=3)
    noise = 0.3
    post = posterior(K, [Observation((0, i), v) for i, v in zip(obs_idx, y)], noise, [(0, i) for i in test_idx])
    mu, cov = brute_force(K, obs_idx, y, noise, test_idx)
    assert np.max(np.abs(post.mean - mu)) <= 1e-10
    assert np.max(np.abs(post.cov - cov)) <= 1e-10


def test_posterior_on_kernel_matrix_with_layout():
    X = path(3)
    Km = matern_kernel(operator_basis(X, "super"), MaternHyper(2, 1, 1))
    obs = [Observation((1, 0), 0.3), Observation((0, 2), -0.1)]
    post = posterior(Km, obs, 0.1, [(0, 0), (1, 1)])
    mu, cov = brute_force(Km.K, [3, 2], np.array([0.3, -0.1]), 0.1, [0, 4])
    np.testing.assert_allclose(post.mean, mu, atol=1e-12)
    np.testing.assert_allclose(post.cov, cov, atol=1e-12)
    assert list(post.targets.dims) == [0, 1] and list(post.targets.cell_ids) == [0, 1]


def test_chain_targets_match_projection():
    rng = np.random.default_rng(4)
    K = random_spd(5, rng)
    c = np.array([1.0, -1.0, 0.0, 2.0, 0.0])
    obs = [Observation(c, 0.4), Observation((0, 4), 1.0)]
    test = [(0, 1), np.array([0.0, 1.0, 1.0, 0.0, 0.0])]
    post = posterior(K, obs, 0.2, test)
    S = np.vstack([c, np.eye(5)[4]])
    T = np.vstack([np.eye(5)[1], test[1]])
    A = S @ K @ S.T + 0.2 * np.eye(2)
    mu = T @ K @ S.T @ np.linalg.solve(A, [0.4, 1.0])
    cov = T @ K @ T.T - T @ K @ S.T @ np.linalg.solve(A, S @ K @ T.T)
    np.testing.assert_allclose(post.mean, mu, atol=1e-12)
    np.testing.assert_allclose(post.cov, cov, atol=1e-12)


def test_empty_observations_return_prior():
    K = random_spd(4, np.random.default_rng(0))
    post = posterior(K, [], 0.1, [(0, 1), (0, 3)])
    np.testing.assert_array_equal(post.mean, [0, 0])
    np.testing.assert_array_equal(post.cov, K[np.ix_([1, 3], [1, 3])])


def test_bad_inputs():
    K = np.eye(3)
    with pytest.raises(ArgumentError):
        posterior(K, [Observation((0, 5), 1.0)], 0.1, [(0, 0)])
    with pytest.raises(ArgumentError):
        posterior(K, [Observation((0, 0), 1.0)], 0.0, [(0, 0)])
    with pytest.raises(ArgumentError):
        posterior(K, [Observation(np.ones(2), 1.0)], 0.1, [(0, 0)])


def test_cholesky_jitter_and_failure():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    cf = cholesky(A)
    assert np.all(np.isfinite(cf[0]))
    with pytest.raises(NumericError):
        cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_posterior_invariants(seed):
    rng = np.random.default_rng(seed)
    n = 7
    K = random_spd(n, rng)
    perm = rng.permutation(n)
    obs_idx, test_idx = perm[:3], perm[3:]
    y = rng.normal(size=3)
    noise = rng.uniform(0.05, 1.0)
    test = [(0, int(i)) for i in test_idx]
    post = posterior(K, [Observation((0, int(i)), v) for i, v in zip(obs_idx, y)], noise, test)
    assert np.all(post.var <= np.diag(K)[test_idx] + 1e-10)
    assert np.max(np.abs(post.cov - post.cov.T)) == 0
    more = posterior(
        K,
        [Observation((0, int(i)), v) for i, v in zip(obs_idx, y)] + [Observation((0, int(test_idx[0])), 0.3)],
        noise,
        test,
    )
    assert np.all(more.var <= post.var + 1e-10)
    c, d = rng.normal(size=(2, n))
    obs = [Observation((0, int(i)), v) for i, v in zip(obs_idx, y)]
    sums = posterior(K, obs, noise, [c, d, c + d]).mean
    assert abs(sums[2] - sums[0] - sums[1]) <= 1e-10 * (1 + np.abs(sums).max())


def test_inference_is_relabeling_invariant():
    X = triangulated_grid(2, 2)
    rho = Relabeling.random(X, 8)
    Y = relabel(X, rho)
    h = RDHyper(0.8, 1.0, 0.9, 2, 1.2)
    Kx = rd_kernel(operator_basis(X, "dirac"), h)
    Ky = rd_kernel(operator_basis(Y, "dirac"), h)
    rng = np.random.default_rng(0)
    perm = rho.direct_sum_perm()
    inv = np.argsort(perm)
    obs_old = rng.choice(X.total_size, 10, replace=False)
    test_old = np.setdiff1d(np.arange(X.total_size), obs_old)
    y = rng.normal(size=10)
    px = posterior(Kx, (Targets.from_indices(obs_old, Kx.layout), y), 0.05, Targets.from_indices(test_old, Kx.layout))
    py = posterior(
        Ky, (Targets.from_indices(inv[obs_old], Ky.layout), y), 0.05, Targets.from_indices(inv[test_old], Ky.layout)
    )
    assert np.max(np.abs(px.mean - py.mean)) <= 1e-10
    assert np.max(np.abs(px.var - py.var)) <= 1e-10


def test_nll_unit_variance_scalar():
    assert nll(np.array([[0.5]]), [Observation((0, 0), 0.0)], 0.5) == pytest.approx(0.918939, abs=1e-6)


def test_nll_grows_with_residual():
    K = np.array([[1.0]])
    vals = [nll(K, [Observation((0, 0), y)], 0.1) for y in (0.0, 0.5, 1.0, 3.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_nll_matches_density(seed):
    rng = np.random.default_rng(seed)
    K = random_spd(6, rng)
    idx = [0, 1, 3, 5]
    y = rng.normal(size=4)
    got = nll(K, [Observation((0, i), v) for i, v in zip(idx, y)], 0.25)
    cov = K[np.ix_(idx, idx)] + 0.25 * np.eye(4)
    assert abs(got + multivariate_normal(np.zeros(4), cov).logpdf(y)) <= 1e-10


def _training_problem(role, seed=0, m=12):
    X = triangulated_grid(2, 2)
    basis = operator_basis(X, role)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(basis.size, m, replace=False))
    return basis, idx, rng.normal(size=m)


@pytest.mark.parametrize(
    "family,params,trainable",
    [
        (MaternFamily(), {"sigma2": 1.3, "lengthscale": 0.8, "nu": 2.0}, ("sigma2", "lengthscale", "nu")),
        (RDFamily(allow_non_even=True), {"sigma2": 0.9, "r": 1.4, "c": 0.7, "d": 1.1, "nu": 2.0}, ("sigma2", "r", "c", "d", "nu")),
    ],
)
@pytest.mark.parametrize("learn_noise", [False, True])
def test_analytic_gradient_matches_finite_differences(family, params, trainable, learn_noise):
    basis, idx, y = _training_problem("super" if family.name == "matern" else "dirac")
    lam = family.spectrum(basis)
    Uf = basis.vectors[idx]
    noise = 0.1
    _, g = nll_and_grad(family, lam, Uf, y, noise, params, trainable, learn_noise)
    h = 1e-5
    for name in trainable + (("noise",) if learn_noise else ()):
        def at(t):
            p = dict(params)
            nz = noise
            if name == "noise":
                nz = noise * math.exp(t)
            else:
                p[name] = params[name] * math.exp(t)
            return nll_and_grad(family, lam, Uf, y, nz, p)[0]

        fd = (at(h) - at(-h)) / (2 * h)
        assert abs(g[name] - fd) <= 1e-4 * max(abs(fd), 1e-8), name


def test_finite_difference_fallback_matches_analytic():
    family = RDFamily()
    basis, idx, y = _training_problem("dirac", 3)
    p = {"sigma2": 0.9, "r": 1.4, "c": 0.7, "d": 1.1, "nu": 2.0}
    args = (family, family.spectrum(basis), basis.vectors[idx], y, 0.1, p, ("sigma2", "r", "c", "d"))
    _, ga = nll_and_grad(*args)
    _, gf = nll_and_grad(*args, grad="fd")
    for k in ga:
        assert gf[k] == pytest.approx(ga[k], rel=1e-5, abs=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_property_random_instances(seed):
    rng = np.random.default_rng(seed)
    basis, idx, y = _training_problem("dirac", seed, m=int(rng.integers(3, 10)))
    fam = RDFamily()
    p = {"sigma2": rng.uniform(0.3, 2), "r": rng.uniform(0.5, 2), "c": rng.uniform(0.1, 1.5), "d": rng.uniform(0.5, 2), "nu": 2.0}
    lam = fam.spectrum(basis)
    Uf = basis.vectors[idx]
    _, g = nll_and_grad(fam, lam, Uf, y, 0.2, p, ("sigma2", "r", "c", "d"))
    h = 1e-5
    for name in ("sigma2", "r", "c", "d"):
        up, dn = dict(p), dict(p)
        up[name] *= math.exp(h)
        dn[name] *= math.exp(-h)
        fd = (nll_and_grad(fam, lam, Uf, y, 0.2, up)[0] - nll_and_grad(fam, lam, Uf, y, 0.2, dn)[0]) / (2 * h)
        assert abs(g[name] - fd) <= 1e-4 * max(abs(fd), 1e-6)


def test_fit_decreases_nll_on_matern_prior_data():
    X = triangulated_grid(9, 9)
    basis = operator_basis(X, "hodge:0")
    prior = matern_kernel(basis, MaternHyper(2, 1.0, 1.0))
    rng = np.random.default_rng(0)
    f = np.linalg.cholesky(prior.K + 1e-10 * np.eye(100)) @ rng.normal(size=100)
    idx = np.sort(rng.choice(100, 40, replace=False))
    y = f[idx] + 0.1 * rng.normal(size=40)
    obs = (Targets.from_indices(idx, basis.layout), y)
    init = {"sigma2": 1.5, "lengthscale": 1.5, "nu": 2.0}
    gp = fit(basis, "matern", init, obs, 0.01, lr=0.1, iters=200, seed=0)
    assert gp.final_nll <= gp.initial_nll
    assert gp.params["nu"] == 2.0
    direct = nll(gp.kernel(), obs, 0.01)
    assert direct == pytest.approx(gp.final_nll, rel=1e-9)
    again = fit(basis, "matern", init, obs, 0.01, lr=0.1, iters=200, seed=0)
    assert again.params == gp.params


def test_fit_predict_matches_dense_posterior(tmp_path):
    basis, idx, y = _training_problem("dirac", 5)
    tr = Targets.from_indices(idx, basis.layout)
    gp = fit(basis, "rd", {"sigma2": 1.5, "r": 1.5, "c": 1.5, "d": 1.5, "nu": 2.0}, (tr, y), 0.05, iters=30)
    test = Targets.from_indices(np.setdiff1d(np.arange(basis.size), idx), basis.layout)
    a = gp.predict(test)
    b = posterior(gp.kernel(), (tr, y), 0.05, test)
    assert np.max(np.abs(a.mean - b.mean)) <= 1e-9
    assert np.max(np.abs(a.cov - b.cov)) <= 1e-9
    gp.save(tmp_path / "fit.json")
    rec = json.loads((tmp_path / "fit.json").read_text())
    assert rec["kernel_family"] == "rd" and rec["iterations"] == 30 and rec["basis_hash"] == basis.complex_hash
    assert set(rec["hyperparameters"]) == {"sigma2", "r", "c", "d", "nu"}


def test_fit_learns_noise_when_asked():
    basis, idx, y = _training_problem("super", 2)
    gp = fit(basis, "matern", {"sigma2": 1, "lengthscale": 1, "nu": 2}, (Targets.from_indices(idx, basis.layout), y), 0.5, iters=50, learn_noise=True)
    assert gp.noise != 0.5


class _ExplodingFamily(MaternFamily):
    name = "exploding"

    def filter(self, s, p):
        if p["sigma2"] > 2.0:
            return np.full_like(s, np.nan)
        return super().filter(s, p)


def test_divergence_reports_last_finite_state():
    basis, idx, _ = _training_problem("super", 1)
    y = 50 * np.ones(idx.size)
    with pytest.raises(OptimizationError) as info:
        fit(basis, _ExplodingFamily(), {"sigma2": 1.5, "lengthscale": 1, "nu": 2}, (Targets.from_indices(idx, basis.layout), y), 0.1, iters=100)
    assert info.value.last_params["sigma2"] <= 2.0
    assert math.isfinite(info.value.last_nll)


def test_fit_argument_checks():
    basis, idx, y = _training_problem("super")
    obs = (Targets.from_indices(idx, basis.layout), y)
    with pytest.raises(ArgumentError):
        fit(basis, "matern", {"sigma2": 1.0, "nu": 2.0}, obs, 0.1)
    with pytest.raises(ArgumentError):
        fit(basis, "matern", {"sigma2": 1.0, "lengthscale": -1.0, "nu": 2.0}, obs, 0.1)
    with pytest.raises(ArgumentError):
        fit(basis, "rd", {"sigma2": 1, "r": 1, "c": 1, "d": 1, "nu": 2}, obs, 0.1)
    with pytest.raises(ArgumentError):
        fit(basis, "gamma", {}, obs, 0.1)


def test_evaluate_scalar_cases():
    t = Targets([(0, 0)], ((0, 1),))
    post = Posterior(np.array([0.0]), np.array([[0.75]]), t)
    out = evaluate(post, np.array([0.0]), 0.25)
    assert out[0]["mse"] == 0.0
    assert out[0]["nll"] == pytest.approx(HALF_LOG_2PI, abs=1e-12)
    with pytest.raises(ArgumentError):
        evaluate(post, np.zeros(2), 0.25)


def test_evaluate_groups_by_dimension():
    t = Targets.from_indices([0, 3, 4], ((0, 3), (1, 2)))
    post = Posterior(np.array([1.0, 0.0, 2.0]), np.diag([0.5, 0.5, 0.5]), t)
    out = evaluate(post, np.array([0.0, 0.0, 0.0]), 0.5)
    assert out[0]["mse"] == 1.0 and out[0]["count"] == 1
    assert out[1]["mse"] == 2.0 and out[1]["count"] == 2
    assert out[1]["nll"] == pytest.approx(2 * HALF_LOG_2PI + 2.0, abs=1e-12)


def test_write_predictions(tmp_path):
    t = Targets.from_indices([1, 4], ((0, 3), (1, 2)))
    post = Posterior(np.array([0.5, -0.5]), np.diag([0.04, 0.09]), t)
    p = tmp_path / "pred.csv"
    write_predictions(p, post, np.array([0.0, 0.0]))
    lines = p.read_text().splitlines()
    assert lines[0] == "dimension,cell_id,mean,std,truth,error"
    assert lines[2].startswith("1,1,-0.5,0.3")

