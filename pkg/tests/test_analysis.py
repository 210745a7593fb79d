from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import random_network
from netcausal.analysis import (
    ESTIMATOR_LEVELS,
    EstimandEstimate,
    EstimatorSpec,
    NigPrior,
    bayes_impute,
    design_matrix,
    diff_means,
    estimate,
    estimator_code,
    integrated_mse,
    linear_weights,
    neyman,
    nig_posterior,
    posterior_interval,
    treated_neighbor_counts,
    write_estimates,
)
from netcausal.errors import ConfigurationError, EstimatorInapplicable
from netcausal.netcore import InfluenceNetwork, toy_network
from netcausal.science import (
    EstimandSpec,
    OutcomeModelSpec,
    build_science,
    compute_estimand,
    observe,
)

Z = np.array([1, 0, 0, 1, 0])
X1 = np.array([0.1, 0.9, 0.6, 0.2, 0.5])
Y1 = np.array([31.06, 13.55, 25.48, 32.14, 4.51])
X2 = np.array([0.4, 0.7, 1.4, 0.3, 0.2])
Y2 = np.array([34.02, 11.91, 33.79, 32.93, 2.07])
Y_SUTVA = np.array([5.44, 9.18, 5.94, 7.1, 5.11])
EMPTY = InfluenceNetwork.from_edges(5, [], [], [])


def test_neyman_values():
    assert neyman(Y_SUTVA, Z) == pytest.approx(-0.473, abs=5e-4)
    assert neyman(np.full(4, 3.0), np.array([1, 0, 1, 0])) == 0.0
    assert neyman(np.array([2.0, 1.0]), np.array([1, 0])) == 1.0
    with pytest.raises(EstimatorInapplicable):
        neyman(np.ones(3), np.ones(3))


def normal_oracle(x, y, column, sigma2, level=0.9):
    """beta_hat +- z sigma sqrt((X'X)^-1) for a known noise variance."""
    xtx_inv = np.linalg.inv(x.T @ x)
    beta = xtx_inv @ x.T @ y
    half = stats.norm.ppf(0.5 + level / 2) * math.sqrt(sigma2 * xtx_inv[column, column])
    return beta[column] - half, beta[column] + half


def toy_interval(y, net, x, target, covariates):
    spec = EstimatorSpec("bayes", covariates=covariates, known_variance=0.1)
    cov = {"independent": x}
    (e,) = bayes_impute(y, Z, net, cov, spec, [target], 40_000, seed=0)
    return e


# (y, network, x, target, covariate set, published interval)
TOY_CASES = {
    "sutva_no_x": (Y_SUTVA, EMPTY, X1, EstimandSpec("primary_avg"), "none", (-0.94, 0.01)),
    "sutva_x": (Y_SUTVA, EMPTY, X1, EstimandSpec("primary_avg"), "independent", (3.97, 5.99)),
    "net_primary_no_x": (Y1, toy_network(), X1, EstimandSpec("primary_avg"), "none",
                         (24.74, 25.83)),
    "net_primary_x": (Y1, toy_network(), X1, EstimandSpec("primary_avg"), "independent",
                      (29.37, 31.55)),
    "net_peer_no_x": (Y2, toy_network(), X2, EstimandSpec("fixed_peer", z=Z), "none",
                      (7.59, 7.95)),
    "net_peer_x": (Y2, toy_network(), X2, EstimandSpec("fixed_peer", z=Z), "independent",
                   (4.22, 5.97)),
}


@pytest.mark.parametrize("case", sorted(TOY_CASES))
def test_toy_intervals_match_normal_oracle(case):
    y, net, x, target, covs, _ = TOY_CASES[case]
    e = toy_interval(y, net, x, target, covs)
    spec = EstimatorSpec("bayes", covariates=covs)
    design, _ = design_matrix(Z, net, {"independent": x}, spec)
    if np.allclose(design[:, 1], 0):
        design = np.delete(design, 1, axis=1)
        column, scale = 0, 1.0
    elif target.kind == "fixed_peer":
        column, scale = 1, linear_weights(net, target, "sum")[1]
    else:
        column, scale = 0, 1.0
    lo, hi = normal_oracle(design, y, column, 0.1)
    lo, hi = sorted((lo * scale, hi * scale))
    assert e.interval[0] == pytest.approx(lo, abs=0.01 * (hi - lo) + 1e-3)
    assert e.interval[1] == pytest.approx(hi, abs=0.01 * (hi - lo) + 1e-3)


@pytest.mark.parametrize("case", sorted(TOY_CASES))
def test_toy_intervals_close_to_published(case):
    y, net, x, target, covs, published = TOY_CASES[case]
    e = toy_interval(y, net, x, target, covs)
    width = published[1] - published[0]
    assert abs(e.interval[0] - published[0]) < max(0.25, 0.15 * width)
    assert abs(e.interval[1] - published[1]) < max(0.25, 0.15 * width)


def test_toy_covariate_policy():
    with_x = toy_interval(*TOY_CASES["net_primary_x"][:5])
    without = toy_interval(*TOY_CASES["net_primary_no_x"][:5])
    assert 29 <= with_x.point <= 32 and with_x.covers(30.0)
    assert without.interval[1] < 28


def test_unknown_variance_interval_is_wider():
    spec = EstimatorSpec("bayes")
    (e,) = bayes_impute(Y_SUTVA, Z, EMPTY, None, spec, [EstimandSpec("primary_avg")], 20_000, 0)
    known = toy_interval(*TOY_CASES["sutva_no_x"][:5])
    assert e.interval[1] - e.interval[0] > known.interval[1] - known.interval[0]


def test_nig_posterior_matches_gibbs_sampler():
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.normal(size=20), rng.normal(size=20), np.ones(20)])
    y = x @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.7, 20)
    prior = NigPrior(scale=10.0, shape=2.0, rate=1.0)
    post = nig_posterior(x, y, prior)
    # semi-conjugate Gibbs on (beta, sigma^2) for the same model
    b, s2 = np.zeros(3), 1.0
    keep = []
    prec0 = np.eye(3) / prior.scale
    for it in range(30_000):
        prec = (prec0 + x.T @ x) / s2
        cov = np.linalg.inv(prec)
        mean = cov @ (x.T @ y) / s2
        b = rng.multivariate_normal(mean, cov)
        r = y - x @ b
        s2 = (prior.rate + 0.5 * (r @ r + b @ prec0 @ b)) / rng.gamma(prior.shape + 0.5 * 23)
        if it >= 1000:
            keep.append(b)
    keep = np.array(keep)
    draws, _ = post.draw(50_000, rng)
    # thinning-free Gibbs chains are near independent here; allow 3 se of both sides
    se = np.sqrt(keep.var(0) / (len(keep) / 5) + draws.var(0) / len(draws))
    assert np.all(np.abs(keep.mean(0) - draws.mean(0)) < 3 * se)
    assert np.allclose(np.cov(keep.T), np.cov(draws.T), rtol=0.08, atol=1e-3)


def test_exact_fit_recovers_tau():
    rng = np.random.default_rng(1)
    net = random_network(rng, 30, 4)
    model = OutcomeModelSpec(tau=4.0, gamma=0.7, betas=2.0, mu=1.0, noise_sd=0.0,
                             confounder="independent")
    table = build_science(net, model, seed=rng)
    z = (rng.random(30) < 0.4).astype(int)
    y = observe(table, z)
    spec = EstimatorSpec("bayes", covariates="independent", known_variance=1e-12)
    (e,) = bayes_impute(y, z, net, {"independent": table.covariates}, spec,
                        [EstimandSpec("primary_avg")], 1000, 0)
    assert e.point == pytest.approx(4.0, abs=1e-6)


def test_well_specified_coverage_is_nominal():
    rng = np.random.default_rng(2)
    net = random_network(rng, 60, 5)
    model = OutcomeModelSpec(tau=5.0, gamma=0.3, betas=2.0, mu=1.0, noise_sd=1.0,
                             confounder="independent")
    spec = EstimatorSpec("bayes", covariates="independent")
    hits = []
    for _ in range(400):
        table = build_science(net, model, seed=rng)
        z = np.zeros(60, int)
        z[rng.choice(60, 20, replace=False)] = 1
        (e,) = bayes_impute(observe(table, z), z, net, {"independent": table.covariates}, spec,
                            [EstimandSpec("primary_avg")], 400, rng)
        hits.append(e.covers(5.0))
    assert abs(np.mean(hits) - 0.9) <= 0.04


def _dm_setup(noise_sd=0.0, seed=3):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 80, 3, p=0.05)
    model = OutcomeModelSpec(tau=3.0, gamma=1.5, betas=0.0, mu=1.0, noise_sd=noise_sd)
    table = build_science(net, model, seed=rng)
    z = (rng.random(80) < 0.3).astype(int)
    return net, table, z, observe(table, z)


def test_diff_means_exact_cells_and_noiseless_oracle():
    net, table, z, y = _dm_setup()
    e = diff_means(y, z, net, EstimandSpec("primary_avg"))
    count = treated_neighbor_counts(net, z)
    expect = y[(z == 1) & (count == 0)].mean() - y[(z == 0) & (count == 0)].mean()
    assert e.value == pytest.approx(expect) and "fallback_cells" not in e.flags
    assert e.value == pytest.approx(compute_estimand(table, EstimandSpec("primary_avg")).value,
                                    abs=1e-9)


def test_diff_means_counts_binary_neighbors():
    net = InfluenceNetwork.from_edges(3, [0, 1], [2, 2], [5.0, 2.0])
    assert treated_neighbor_counts(net, np.array([1, 1, 0])).tolist() == [0, 0, 2]


def test_diff_means_fallback_flag():
    net = InfluenceNetwork.from_edges(4, [0], [1], [1.0])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    z = np.array([1, 0, 0, 0])
    e = diff_means(y, z, net, EstimandSpec("k_neighbors", k=2), nearest=1)
    assert e.flags["fallback_cells"]
    with pytest.raises(EstimatorInapplicable):
        diff_means(y, np.zeros(4, int), net, EstimandSpec("primary_avg"))


def test_diff_means_ignoring_exposure():
    net, table, z, y = _dm_setup(noise_sd=1.0)
    e = diff_means(y, z, net, EstimandSpec("primary_avg"), grouping="ignore")
    assert e.value == neyman(y, z)
    e = diff_means(y, z, net, EstimandSpec("k_neighbors", k=1), grouping="ignore")
    assert e.value == 0.0 and e.flags["degenerate"]


def test_posterior_interval():
    assert posterior_interval(np.full(200, 2.5)) == (2.5, 2.5)
    lo, hi = posterior_interval(np.arange(1.0, 101.0), 0.9)
    assert lo == pytest.approx(5.95) and hi == pytest.approx(95.05)
    s = np.random.default_rng(0).normal(size=500)
    widths = [np.subtract(*posterior_interval(s, lv)[::-1]) for lv in (0.5, 0.8, 0.9, 0.99)]
    assert all(a <= b for a, b in zip(widths, widths[1:]))
    with pytest.raises(ConfigurationError):
        posterior_interval(np.ones(10))


def test_integrated_mse_examples():
    assert integrated_mse(EstimandEstimate("t", 1.0), 1.0) == 0.0
    e = EstimandEstimate("t", samples=np.array([0.0, 2.0] * 50))
    assert integrated_mse(e, 1.0) == 1.0


@given(st.lists(st.floats(-100, 100), min_size=100, max_size=300), st.floats(-100, 100))
def test_integrated_mse_bias_variance_identity(values, truth):
    s = np.array(values)
    e = EstimandEstimate("t", samples=s)
    mse = integrated_mse(e, truth)
    assert mse == pytest.approx((s.mean() - truth) ** 2 + s.var(), rel=1e-9, abs=1e-9)
    assert mse >= (s.mean() - truth) ** 2 - 1e-9


def test_every_estimator_level_runs():
    net, table, z, y = _dm_setup(noise_sd=1.0)
    rng = np.random.default_rng(0)
    covs = {"activity": rng.uniform(0.5, 3, 80), "membership": rng.dirichlet(np.ones(3), 80)}
    targets = [EstimandSpec("primary_avg"), EstimandSpec("k_neighbors", k=1)]
    for code in ESTIMATOR_LEVELS:
        out = estimate(code, y, z, net, targets, covs, 200, seed=1)
        assert [e.target for e in out] == ["primary_avg", "k_neighbors(k=1)"]
        assert estimator_code(ESTIMATOR_LEVELS[code]) == code
    with pytest.raises(EstimatorInapplicable):
        estimate("BIPS", y, z, net, targets, None, 200)


def test_estimator_validation():
    with pytest.raises(ConfigurationError):
        EstimatorSpec("lasso")
    with pytest.raises(ConfigurationError):
        EstimatorSpec("bayes", covariates="everything")
    with pytest.raises(ConfigurationError):
        bayes_impute(Y1, Z, EMPTY, None, EstimatorSpec("bayes"), [EstimandSpec("primary_avg")], 50)
    with pytest.raises(EstimatorInapplicable):
        linear_weights(EMPTY, EstimandSpec("strategy_direct", strategy=object()), "sum")


def test_write_estimates(tmp_path):
    e = EstimandEstimate("primary_avg", samples=np.linspace(0, 1, 101)).with_truth(0.5)
    write_estimates([e, EstimandEstimate("x", 2.0)], tmp_path / "e.json")
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc[0]["samples"]["count"] == 101 and doc[0]["truth"] == 0.5
    assert doc[1]["interval"] is None and doc[1]["imse"] is None
