from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from netcausal.errors import ConfigurationError, DataError, NumericError
from netcausal.hmmb_infer import (
    ChainState,
    HmmbPosterior,
    McmcConfig,
    block_gradient,
    bound_widths,
    cramer_rao_width,
    fisher_information,
    gibbs_step_hyper,
    gibbs_step_switches,
    lambda_gradient,
    log_joint_posterior,
    mh_step_block,
    mh_step_lambda,
    mh_step_membership,
    read_trace,
    rescale_to_reference,
    run_mcem,
    run_mcmc,
    select_chain,
    switch_on_probability,
    write_trace,
)
from netcausal.hmmb_infer import backend
from netcausal.hmmb_infer.fisher import FisherMatrix
from netcausal.hmmb_infer.mcem import gradient_step
from netcausal.hmmb_infer.posterior import align_communities, evaluate_run
from netcausal.netcore import (
    HmmbParams,
    InfluenceNetwork,
    baseline_config,
    sample_hmmb_params,
    sample_network,
)

BACKENDS = ["python"] + (["compiled"] if backend.compiled is not None else [])


def small_params(rng, n=5, k=2, timespan=4.0, on_frac=0.7):
    on = rng.random((n, n)) < on_frac
    np.fill_diagonal(on, False)
    return HmmbParams(
        lam=rng.uniform(0.5, 2.0, n), pi=rng.dirichlet(np.ones(k), size=n),
        block=rng.uniform(0.2, 1.5, (k, k)), switches=on, sparsity=0.6, alpha=2.5,
        pseudocounts=np.ones((k, 1)), lifestyle_probs=np.ones(1), timespan=timespan,
    )


def instance(seed, n=5, k=2, timespan=4.0):
    rng = np.random.default_rng(seed)
    p = small_params(rng, n, k, timespan)
    return p, sample_network(p, rng)


# Kernel backends -------------------------------------------------------------


@pytest.mark.skipif(backend.compiled is None, reason="compiled kernels not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_make_identical_decisions(seed):
    p, net = instance(seed, n=12, k=3)
    config = McmcConfig(timespan=p.timespan, fix_block_diagonal=False)
    states = {}
    for name in ("python", "compiled"):
        rng = np.random.default_rng(seed)
        state = ChainState.from_params(net, p, config)
        from netcausal.hmmb_infer.sampler import sweep
        for _ in range(20):
            sweep(state, config, rng, backend.get_kernels(name))
        states[name] = state
    a, b = states["python"], states["compiled"]
    assert np.allclose(a.lam, b.lam, rtol=1e-12, atol=0)
    assert np.allclose(a.pi, b.pi, rtol=1e-10, atol=1e-14)
    assert np.allclose(a.block, b.block, rtol=1e-12, atol=0)
    assert np.array_equal(a.on, b.on)


@pytest.mark.parametrize("name", BACKENDS)
def test_kernel_log_joint_matches_oracle(name):
    p, net = instance(3)
    state = ChainState.from_params(net, p, McmcConfig(timespan=p.timespan))
    from netcausal.hmmb_infer.sampler import state_log_joint
    got = state_log_joint(state, McmcConfig(), backend.get_kernels(name))
    assert got == pytest.approx(oracles.log_joint(p, oracles.dense(net)), rel=1e-10)
    assert log_joint_posterior(p, net) == pytest.approx(got, rel=1e-12)


def test_backend_selection(monkeypatch):
    assert backend.get_kernels("python") is backend.python
    monkeypatch.setenv("NETCAUSAL_BACKEND", "python")
    assert backend.get_kernels() is backend.python
    assert backend.backend_name(backend.python) == "python"


# Single steps ----------------------------------------------------------------


def recorded_trace(seed, steps, kernels):
    p, net = instance(seed, n=6, k=2)
    config = McmcConfig(timespan=p.timespan, fix_block_diagonal=False, step_block=0.6,
                        step_lambda=0.8, step_pi=1.5, lambda_floor=0.05, lambda_ceiling=4.0)
    state = ChainState.from_params(net, p, config)
    rng = np.random.default_rng(seed + 100)
    records = []
    for s in range(steps):
        kind = s % 3
        if kind == 0:
            r = mh_step_lambda(state, config, rng, int(rng.integers(6)), kernels, record=True)
        elif kind == 1:
            r = mh_step_block(state, config, rng, int(rng.integers(2)), int(rng.integers(2)),
                              kernels, record=True)
        else:
            r = mh_step_membership(state, config, rng, int(rng.integers(6)), kernels, record=True)
        records.append(r)
    return records, oracles.dense(net), config, state


@pytest.mark.parametrize("name", BACKENDS)
def test_mh_trace_matches_independent_oracle(name):
    records, a, config, _ = recorded_trace(0, 100, backend.get_kernels(name))
    scales = config.pi_scales(2)
    kinds = {r.kind for r in records}
    assert kinds == {"lambda", "block", "membership"}
    assert any(r.accepted for r in records) and any(not r.accepted for r in records)
    for r in records:
        expect = oracles.mh_accept_prob(r, a, config.lambda_floor, config.lambda_ceiling, scales)
        assert abs(r.accept_prob - expect) < 1e-8, r
        if expect == 0.0:
            assert not r.accepted


def test_mh_steps_apply_exactly_the_recorded_decision():
    records, _, _, _ = recorded_trace(1, 60, backend.get_kernels())
    for prev, nxt in zip(records, records[1:]):
        after = nxt.before
        if prev.kind == "lambda":
            value = after.lam[prev.index[0]]
        elif prev.kind == "block":
            value = after.block[prev.index]
        else:
            value = after.pi[prev.index[0]]
        target = prev.proposed if prev.accepted else prev.current
        assert np.allclose(np.atleast_1d(value), target, rtol=1e-12, atol=1e-15)


def test_lambda_proposal_below_floor_is_rejected():
    p, net = instance(2)
    config = McmcConfig(timespan=p.timespan, step_lambda=50.0, lambda_floor=0.1)
    state = ChainState.from_params(net, p, config)

    class Rng:
        def standard_normal(self, size):
            return np.full(size, -1.0)

        def random(self, size):
            return np.zeros(size)

    before = state.lam.copy()
    r = mh_step_lambda(state, config, Rng(), 0)
    assert r.accept_prob == 0.0 and not r.accepted
    assert np.array_equal(state.lam, before)


def test_better_proposal_always_accepted():
    p, net = instance(4)
    config = McmcConfig(timespan=p.timespan, fix_block_diagonal=False)
    for _ in range(30):
        state = ChainState.from_params(net, p, config)
        r = mh_step_lambda(state, config, np.random.default_rng(_), 1)
        if r.log_ratio >= 0:
            assert r.accept_prob == 1.0 and r.accepted


def test_negative_block_proposal_rejected_and_fixed_entries_untouched():
    p, net = instance(5)
    config = McmcConfig(timespan=p.timespan, step_block=1e3)
    state = ChainState.from_params(net, p, config)
    assert state.fixed.reshape(2, 2)[0, 0] == 1
    rng = np.random.default_rng(0)
    for _ in range(50):
        r = mh_step_block(state, config, rng, 0, 1)
        if r.proposed[0] < 0:
            assert not r.accepted and r.accept_prob == 0.0
        mh_step_block(state, config, rng, 0, 0)
        mh_step_block(state, config, rng, 1, 1)
    assert state.block[0, 0] == p.block[0, 0] and state.block[1, 1] == p.block[1, 1]
    assert np.all(state.block >= 0)


def test_membership_identity_proposal_accepts():
    p, net = instance(6)
    config = McmcConfig(timespan=p.timespan)
    state = ChainState.from_params(net, p, config)

    class ZeroRng:
        def standard_normal(self, size):
            return np.zeros(size)

        def random(self, size):
            return np.full(size, 0.999)

    r = mh_step_membership(state, config, ZeroRng(), 2)
    assert r.log_hastings == pytest.approx(0.0, abs=1e-12)
    assert r.accept_prob == pytest.approx(1.0) and r.accepted


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_membership_stays_on_simplex(seed):
    p, net = instance(seed % 50, n=5, k=3)
    config = McmcConfig(timespan=p.timespan, step_pi=4.0)
    state = ChainState.from_params(net, p, config)
    rng = np.random.default_rng(seed)
    for i in range(5):
        mh_step_membership(state, config, rng, i)
    assert np.allclose(state.pi.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(state.pi >= 0)
    assert np.allclose(state.mix, state.pi @ state.block @ state.pi.T, rtol=1e-10, atol=1e-13)


def test_switch_on_probability_values():
    assert switch_on_probability(0.0, 0.3) == pytest.approx(0.3)
    expect = 0.2 * math.exp(-1) / (0.2 * math.exp(-1) + 0.8)
    assert switch_on_probability(1.0, 0.2) == pytest.approx(expect, rel=1e-12)
    assert switch_on_probability(1.0, 0.2) == pytest.approx(0.0842, abs=5e-5)


def test_switch_gibbs_step_frequencies():
    n = 40
    a = np.zeros((n, n))
    a[0, 1] = 5
    net = InfluenceNetwork.from_dense(a)
    p = HmmbParams(lam=np.ones(n), pi=np.ones((n, 1)), block=np.array([[1.0 / 100]]),
                   switches=np.ones((n, n), bool) & ~np.eye(n, dtype=bool), sparsity=0.2,
                   alpha=2.5, pseudocounts=np.ones((1, 1)), lifestyle_probs=np.ones(1),
                   timespan=100.0)
    config = McmcConfig(timespan=100.0)
    rng = np.random.default_rng(1)
    freq = np.zeros((n, n))
    for _ in range(200):
        state = ChainState.from_params(net, p, config)
        gibbs_step_switches(state, config, rng)
        freq += state.on
        assert state.on[0, 1] == 1
    off = ~np.eye(n, dtype=bool)
    off[0, 1] = False
    rate = freq[off].mean() / 200
    assert abs(rate - switch_on_probability(1.0, 0.2)) < 0.005
    state = ChainState.from_params(net, p, config.with_(switch_policy="map_fixed"))
    gibbs_step_switches(state, config.with_(switch_policy="map_fixed"), rng)
    assert state.on.sum() == 1


def test_hyper_step_conjugate_boundaries():
    n = 10
    p, net = instance(7, n=n)
    rng = np.random.default_rng(2)
    config = McmcConfig(timespan=p.timespan, update_alpha=False)
    for all_on, mean in ((True, (n * n - n + 1) / (n * n - n + 2)), (False, 1 / (n * n - n + 2))):
        state = ChainState.from_params(net, p, config)
        state.on[:] = 1 if all_on else 0
        np.fill_diagonal(state.on, 0)
        draws = [gibbs_step_hyper(state, config, rng)[1] for _ in range(4000)]
        assert np.mean(draws) == pytest.approx(mean, abs=3 * np.std(draws) / math.sqrt(4000))


def test_alpha_with_flat_likelihood_stays_in_support():
    p, net = instance(8)
    config = McmcConfig(timespan=p.timespan, step_alpha=0.5)
    state = ChainState.from_params(net, p, config)
    state.lam[:] = 1.0  # log-likelihood in alpha is flat
    rng = np.random.default_rng(3)
    values = [gibbs_step_hyper(state, config, rng)[0] for _ in range(3000)]
    assert min(values) >= 2.0 and max(values) <= 3.0
    # flat target on [2, 3]: roughly uniform occupancy
    assert abs(np.mean(values) - 2.5) < 0.1


# Calibration -----------------------------------------------------------------


@pytest.mark.parametrize("name", BACKENDS)
def test_sbc_small_run_is_uniform(name):
    ranks = oracles.sbc_ranks(backend.get_kernels(name), 60, seed=11, samples=4)
    for v in ranks.values():
        assert oracles.rank_uniformity_pvalue(v, 5) > 0.001


def test_sbc_detects_a_wrong_prior():
    k = backend.get_kernels()

    class WrongPrior:
        sweep_pi = k.sweep_pi

        @staticmethod
        def sweep_lambda(a, on, mix, lam, t, alpha, lo, hi, *rest):
            return k.sweep_lambda(a, on, mix, lam, t, 0.0, lo, hi, *rest)

    ranks = oracles.sbc_ranks(WrongPrior, 200, seed=1)
    assert oracles.rank_uniformity_pvalue(ranks["lambda"], 10) < 0.01


# Gradients -------------------------------------------------------------------


def _fd(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h * max(abs(x[idx]), 1.0)
        g[idx] = (f(x + e) - f(x - e)) / (2 * e[idx])
    return g


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(seed):
    p, net = instance(seed, n=4, k=2)
    a = oracles.dense(net)
    glam = lambda_gradient(p.lam, p.pi, p.block, a, p.switches, p.timespan, p.alpha)
    fd_lam = _fd(lambda x: log_joint_posterior(p.replace(lam=x), net), p.lam, 1e-5)
    assert np.allclose(glam, fd_lam, rtol=1e-6, atol=1e-8)
    gb = block_gradient(p.block, p.pi, p.lam, a, p.switches, p.timespan)
    fd_b = _fd(lambda x: log_joint_posterior(p.replace(block=x), net), p.block, 1e-5)
    assert np.allclose(gb, fd_b, rtol=1e-6, atol=1e-8)


def test_gradient_step_at_stationary_point_is_identity():
    rng = np.random.default_rng(4)
    p = small_params(rng, n=4, on_frac=1.0)
    # expected counts make every gradient vanish when the prior is off
    rate = p.timespan * np.outer(p.lam, p.lam) * (p.pi @ p.block @ p.pi.T)
    np.fill_diagonal(rate, 0.0)
    config = McmcConfig(timespan=p.timespan, lambda_prior=False, fix_block_diagonal=False)
    net = InfluenceNetwork.from_dense(np.ones((4, 4)) - np.eye(4))
    state = ChainState.from_params(net, p, config)
    state.a = rate
    g = lambda_gradient(p.lam, p.pi, p.block, rate, p.switches, p.timespan, 0.0)
    assert np.allclose(g, 0.0, atol=1e-12)
    lam, block = state.lam.copy(), state.block.copy()
    assert gradient_step(state, config, 0.5, 0.5) == 0
    assert np.allclose(state.lam, lam, rtol=1e-12)
    assert np.allclose(state.block, block, rtol=1e-12)


# Fisher information ------------------------------------------------------------


def test_fisher_empty_node_and_linearity_in_timespan():
    p, _ = instance(9)
    sw = p.switches.copy()
    sw[1, :] = False
    sw[:, 1] = False
    f = fisher_information(1, p, sw)
    assert np.array_equal(f.matrix, np.zeros((1, 1)))
    f1 = fisher_information(0, p).matrix
    f2 = fisher_information(0, p.replace(timespan=2 * p.timespan)).matrix
    assert np.allclose(f2, 2 * f1, rtol=1e-14)


def test_fisher_zero_rate_raises():
    p, _ = instance(10)
    block = np.zeros((2, 2))
    with pytest.raises(NumericError):
        fisher_information(0, p.replace(block=block))
    with pytest.raises(ConfigurationError):
        fisher_information(0, p.replace(pi=np.ones((p.n, 1)), block=np.ones((1, 1))))


@pytest.mark.parametrize("seed", range(2))
def test_fisher_matches_expected_hessian(seed):
    rng = np.random.default_rng(seed)
    p = small_params(rng, n=3, k=2, timespan=5.0, on_frac=1.0)
    oracle = oracles.expected_observed_information(p, 0, 100_000, rng)
    assert np.allclose(fisher_information(0, p).matrix, oracle, rtol=0.02)


def test_cramer_rao_widths():
    from scipy.stats import norm
    z = norm.ppf(0.95)
    f = FisherMatrix(0, 4.0 * np.eye(2), 2)
    w, singular = cramer_rao_width(f, 0.9)
    assert not singular
    assert np.allclose(w, 2 * z / 2.0)
    p, _ = instance(11, n=6, k=3)
    w1, _ = cramer_rao_width(fisher_information(0, p))
    w4, _ = cramer_rao_width(fisher_information(0, p.replace(timespan=4 * p.timespan)))
    assert np.allclose(w4, w1 / 2)
    w, singular = cramer_rao_width(FisherMatrix(0, np.zeros((2, 2)), 2))
    assert singular and np.all(np.isinf(w))
    assert bound_widths(p).shape == (6, 3)


# Chains, MCEM, posterior ------------------------------------------------------


def test_select_chain_argmax():
    traces = [np.full(100, -100.0), np.full(100, -90.0)]
    assert select_chain(traces) == 1


def test_run_mcmc_smoke_and_determinism():
    params = sample_hmmb_params(baseline_config(30), 1)
    net = sample_network(params, 2)
    config = McmcConfig(chains=2, iterations=60, burn_in=30, adapt_interval=10)
    a = run_mcmc(net, 4, config, seed=5, reference=np.diag(params.block))
    b = run_mcmc(net, 4, config, seed=5, reference=np.diag(params.block))
    assert a.samples == 30 and a.pi.shape == (30, 30, 4)
    assert np.array_equal(a.lam, b.lam) and np.array_equal(a.pi, b.pi)
    assert np.allclose(a.pi.sum(axis=2), 1.0)
    assert a.log_joint.shape == (2, 60)
    scores = evaluate_run(a, params)
    assert 0 <= scores["pi_coverage"] <= 1
    for init in ("partial", "none"):
        post = run_mcmc(net, 4, config.with_(init=init), seed=5)
        assert np.all(np.isfinite(post.log_joint[:, -1]))


def test_rescale_preserves_rates_and_log_joint():
    params = sample_hmmb_params(baseline_config(20), 3)
    net = sample_network(params, 4)
    post = run_mcmc(net, 4, McmcConfig(chains=1, iterations=20, burn_in=10, init="partial"),
                    seed=1)
    ref = np.array([1.0, 2.0, 1.5, 0.5])
    out = rescale_to_reference(post, ref)
    for s in range(post.samples):
        before = post.lam[s][:, None] * post.lam[s][None, :] * (post.pi[s] @ post.block[s] @ post.pi[s].T)
        after = out.lam[s][:, None] * out.lam[s][None, :] * (out.pi[s] @ out.block[s] @ out.pi[s].T)
        assert np.allclose(before, after, rtol=1e-10)
    with pytest.raises(DataError):
        rescale_to_reference(post, np.zeros(4))


def test_align_communities_recovers_permutation():
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(3) * 0.3, size=40)
    perm = [2, 0, 1]
    post = HmmbPosterior(
        lam=np.ones((2, 40)), pi=np.stack([pi[:, perm]] * 2), block=np.stack([np.eye(3)] * 2),
        alpha=np.ones(2), sparsity=np.ones(2) * 0.5, log_joint=np.zeros((1, 2)), selected_chain=0,
    )
    aligned = align_communities(post, pi)
    assert np.allclose(aligned.pi[0], pi)


def test_trace_round_trip(tmp_path):
    params = sample_hmmb_params(baseline_config(12), 3)
    net = sample_network(params, 4)
    post = run_mcmc(net, 2, McmcConfig(chains=1, iterations=10, burn_in=5), seed=1)
    write_trace(post, tmp_path / "t.bin")
    back = read_trace(tmp_path / "t.bin")
    for name in ("lam", "pi", "block", "alpha", "sparsity"):
        assert np.array_equal(back[name], getattr(post, name))
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-16])
    with pytest.raises(DataError):
        read_trace(tmp_path / "cut.bin")
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(DataError):
        read_trace(tmp_path / "bad.bin")


def test_run_mcem_smoke():
    params = sample_hmmb_params(baseline_config(30), 7)
    net = sample_network(params, 8)
    res = run_mcem(net, 4, McmcConfig(chains=1, iterations=40, burn_in=20), seed=3)
    assert res.lam_path.shape == (40, 30) and res.pi.shape == (20, 30, 4)
    assert np.all(res.lam_path > 0) and np.all(res.block_path >= 0)
    assert 1 <= res.iterations_to_mode <= 40
    assert res.log_joint[-1] >= res.log_joint[0]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        McmcConfig(burn_in=10, iterations=10)
    with pytest.raises(ConfigurationError):
        McmcConfig(switch_policy="sometimes")
    with pytest.raises(ConfigurationError):
        McmcConfig(init="magic")
    with pytest.raises(ConfigurationError):
        McmcConfig(step_pi=(0.1, 0.2)).pi_scales(4)


def test_gradient_step_gives_up_after_halvings(monkeypatch):
    from netcausal.hmmb_infer import mcem
    p, net = instance(12)
    config = McmcConfig(timespan=p.timespan)
    state = ChainState.from_params(net, p, config)
    monkeypatch.setattr(mcem, "lambda_gradient", lambda *a: np.full(p.n, np.nan))
    with pytest.raises(NumericError):
        gradient_step(state, config, 0.5, 0.5, max_halvings=3)
