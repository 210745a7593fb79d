"""Metropolis-within-Gibbs sampler for the HMMB posterior.

One iteration updates, in order: every activity level, every block entry,
every membership vector, the edge switches, then the hyperparameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import ModuleType

import numpy as np
from scipy.special import gammaln

from ..errors import ConfigurationError
from ..netcore import HmmbParams, InfluenceNetwork
from ..seeding import SeedLike, as_generator, derive_rng
from . import _kernels_py
from .backend import backend_name, get_kernels

POLICIES = {"map_fixed": 0, "full": 1, "selective": 2}
INIT_STRATEGIES = ("full", "partial", "none")


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings.

    ``step_lambda`` is an absolute proposal sd; when None each node uses
    ``step_lambda_rel`` times its initial value. ``step_pi`` is the variance of
    the logit-scale proposal (scalar or one entry per free coordinate).
    """

    timespan: float = 100.0
    chains: int = 3
    iterations: int = 2000
    burn_in: int = 1000
    step_lambda: float | None = None
    step_lambda_rel: float = 0.1
    step_block: float = 0.05
    step_pi: float | tuple[float, ...] = 0.25
    lambda_floor: float = 1e-4
    lambda_ceiling: float = math.inf
    lambda_prior: bool = True
    init: str = "full"
    fix_block_diagonal: bool = True
    block_diagonal: tuple[float, ...] | None = None
    fix_block: bool = False
    update_alpha: bool = True
    step_alpha: float = 0.1
    alpha_init: float = 2.5
    alpha_support: tuple[float, float] = (2.0, 3.0)
    update_sparsity: bool = True
    switch_policy: str = "full"
    selective_cutoff: float = 0.5
    adapt: bool = True
    adapt_interval: int = 50
    profile_iterations: int = 200
    simplex_clamp: float = 1e-12
    keep_every: int = 1
    backend: str | None = None

    def __post_init__(self) -> None:
        if self.chains < 1 or self.iterations < 1:
            raise ConfigurationError("chains and iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError("burn_in must lie in [0, iterations)")
        steps = np.atleast_1d(np.asarray(self.step_pi, dtype=float))
        if self.step_block <= 0 or np.any(steps <= 0) or self.step_lambda_rel <= 0:
            raise ConfigurationError("step sizes must be positive")
        if self.step_lambda is not None and self.step_lambda <= 0:
            raise ConfigurationError("step_lambda must be positive")
        if self.switch_policy not in POLICIES:
            raise ConfigurationError(f"unknown switch policy {self.switch_policy!r}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigurationError(f"unknown init strategy {self.init!r}")
        if self.lambda_floor < 0 or self.lambda_ceiling <= self.lambda_floor:
            raise ConfigurationError("need 0 <= lambda_floor < lambda_ceiling")
        lo, hi = self.alpha_support
        if not 1.0 < lo < hi:
            raise ConfigurationError("alpha support must satisfy 1 < lo < hi")
        if self.keep_every < 1:
            raise ConfigurationError("keep_every must be >= 1")

    def pi_scales(self, k: int) -> np.ndarray:
        var = np.atleast_1d(np.asarray(self.step_pi, dtype=float))
        if var.size == 1:
            var = np.full(max(k - 1, 0), float(var[0]))
        if var.size != max(k - 1, 0):
            raise ConfigurationError(f"step_pi needs {k - 1} entries")
        return np.sqrt(var)

    def with_(self, **changes) -> "McmcConfig":
        return replace(self, **changes)


@dataclass
class StepRecord:
    """One Metropolis-Hastings decision, with enough context to replay it."""

    kind: str
    index: tuple[int, ...]
    current: np.ndarray
    proposed: np.ndarray
    log_ratio: float
    log_hastings: float
    accept_prob: float
    accepted: bool
    before: HmmbParams | None = None


def dense_counts(net: InfluenceNetwork) -> np.ndarray:
    return np.ascontiguousarray(net.to_dense(), dtype=np.float64)


@dataclass
class ChainState:
    """Mutable sampler state with cached ``mix[i, j] = pi_i' B pi_j``."""

    a: np.ndarray
    log_fact: np.ndarray
    lam: np.ndarray
    pi: np.ndarray
    block: np.ndarray
    on: np.ndarray
    sparsity: float
    alpha: float
    timespan: float
    fixed: np.ndarray
    step_lam: np.ndarray
    step_block: float
    pi_scales: np.ndarray
    pi_mult: np.ndarray
    mix: np.ndarray = field(init=False)
    template: HmmbParams | None = None

    def __post_init__(self) -> None:
        self.lam = np.ascontiguousarray(self.lam, dtype=np.float64)
        self.pi = np.ascontiguousarray(self.pi, dtype=np.float64)
        self.block = np.ascontiguousarray(self.block, dtype=np.float64)
        self.on = np.ascontiguousarray(self.on, dtype=np.uint8)
        np.fill_diagonal(self.on, 0)
        self.fixed = np.ascontiguousarray(self.fixed, dtype=np.uint8).ravel()
        self.recompute_mix()

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    @property
    def k(self) -> int:
        return self.block.shape[0]

    def recompute_mix(self) -> None:
        self.mix = np.ascontiguousarray(self.pi @ self.block @ self.pi.T)

    @classmethod
    def from_params(
        cls,
        net: InfluenceNetwork,
        params: HmmbParams,
        config: McmcConfig | None = None,
        fixed: np.ndarray | None = None,
    ) -> "ChainState":
        config = config or McmcConfig()
        a = dense_counts(net)
        k = params.k
        if fixed is None:
            fixed = np.zeros((k, k), dtype=np.uint8)
            if config.fix_block:
                fixed[:] = 1
            elif config.fix_block_diagonal and config.init == "full":
                np.fill_diagonal(fixed, 1)
        if config.step_lambda is not None:
            step_lam = np.full(params.n, config.step_lambda)
        else:
            step_lam = np.maximum(config.step_lambda_rel * params.lam, 1e-6)
        return cls(
            a=a,
            log_fact=gammaln(a + 1.0),
            lam=params.lam.copy(),
            pi=params.pi.copy(),
            block=params.block.copy(),
            on=params.switches.astype(np.uint8),
            sparsity=float(params.sparsity),
            alpha=float(params.alpha),
            timespan=float(params.timespan),
            fixed=fixed,
            step_lam=step_lam,
            step_block=config.step_block,
            pi_scales=config.pi_scales(k),
            pi_mult=np.ones(params.n),
            template=params,
        )

    def to_params(self) -> HmmbParams:
        t = self.template
        k = self.k
        return HmmbParams(
            lam=self.lam.copy(),
            pi=self.pi.copy(),
            block=self.block.copy(),
            switches=self.on.astype(bool),
            sparsity=float(self.sparsity),
            alpha=float(self.alpha),
            pseudocounts=t.pseudocounts if t is not None else np.ones((k, 1)),
            lifestyle_probs=t.lifestyle_probs if t is not None else np.ones(1),
            timespan=self.timespan,
        )

    def copy(self) -> "ChainState":
        new = ChainState(
            a=self.a,
            log_fact=self.log_fact,
            lam=self.lam.copy(),
            pi=self.pi.copy(),
            block=self.block.copy(),
            on=self.on.copy(),
            sparsity=self.sparsity,
            alpha=self.alpha,
            timespan=self.timespan,
            fixed=self.fixed.copy(),
            step_lam=self.step_lam.copy(),
            step_block=self.step_block,
            pi_scales=self.pi_scales.copy(),
            pi_mult=self.pi_mult.copy(),
            template=self.template,
        )
        return new


def _alpha_prior(state: ChainState, config: McmcConfig) -> float:
    return state.alpha if config.lambda_prior else 0.0


def state_log_joint(state: ChainState, config: McmcConfig, kernels: ModuleType | None = None) -> float:
    k = kernels or get_kernels(config.backend)
    return float(
        k.log_joint(
            state.a, state.on, state.mix, state.lam, state.timespan, state.sparsity,
            _alpha_prior(state, config), state.log_fact,
        )
    )


def log_joint_posterior(
    params: HmmbParams, net: InfluenceNetwork, lambda_prior: bool = True
) -> float:
    """Log joint posterior (up to a constant) of ``params`` given ``net``.

    Sums the Poisson log-pmf over on-switch pairs, the Bernoulli switch terms,
    and the power-law log prior on activity levels; B and pi have flat priors.
    Returns ``-inf`` if a positive count sits on an off switch.
    """
    a = dense_counts(net)
    if a.shape[0] != params.n:
        raise ConfigurationError("network and params disagree on node count")
    mix = np.ascontiguousarray(params.pi @ params.block @ params.pi.T)
    on = np.ascontiguousarray(params.switches, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        return float(
            _kernels_py.log_joint(
                a, on, mix, params.lam, params.timespan, params.sparsity,
                params.alpha if lambda_prior else 0.0, gammaln(a + 1.0),
            )
        )


def _accept_prob(log_ratio: float) -> float:
    if math.isnan(log_ratio):
        return 0.0
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


# Single steps --------------------------------------------------------------


def mh_step_lambda(
    state: ChainState, config: McmcConfig, rng: np.random.Generator, i: int,
    kernels: ModuleType | None = None, record: bool = False,
) -> StepRecord:
    """One Metropolis update of ``lam[i]`` (in place)."""
    k = kernels or get_kernels(config.backend)
    before = state.to_params() if record else None
    cur = state.lam[i]
    normals = rng.standard_normal(1)
    uniforms = rng.random(1)
    acc = np.zeros(1, dtype=np.uint8)
    lr = np.zeros(1)
    k.sweep_lambda(
        state.a, state.on, state.mix, state.lam, state.timespan, _alpha_prior(state, config),
        config.lambda_floor, config.lambda_ceiling, np.array([i], dtype=np.int64),
        state.step_lam, normals, uniforms, acc, lr,
    )
    prop = cur + state.step_lam[i] * normals[0]
    return StepRecord(
        "lambda", (i,), np.array([cur]), np.array([prop]), float(lr[0]), 0.0,
        _accept_prob(float(lr[0])), bool(acc[0]), before,
    )


def mh_step_block(
    state: ChainState, config: McmcConfig, rng: np.random.Generator, m: int, q: int,
    kernels: ModuleType | None = None, record: bool = False,
) -> StepRecord:
    """One Metropolis update of ``block[m, q]``; fixed entries are left alone."""
    k = kernels or get_kernels(config.backend)
    before = state.to_params() if record else None
    cur = state.block[m, q]
    normals = rng.standard_normal(1)
    uniforms = rng.random(1)
    acc = np.zeros(1, dtype=np.uint8)
    lr = np.zeros(1)
    flat = np.array([m * state.k + q], dtype=np.int64)
    k.sweep_block(
        state.a, state.on, state.mix, state.lam, state.pi, state.block, state.timespan,
        flat, state.step_block, normals, uniforms, state.fixed, acc, lr,
    )
    prop = cur if state.fixed[flat[0]] else cur + state.step_block * normals[0]
    return StepRecord(
        "block", (m, q), np.array([cur]), np.array([prop]), float(lr[0]), 0.0,
        _accept_prob(float(lr[0])) if not state.fixed[flat[0]] else 0.0, bool(acc[0]), before,
    )


def mh_step_membership(
    state: ChainState, config: McmcConfig, rng: np.random.Generator, i: int,
    kernels: ModuleType | None = None, record: bool = False,
) -> StepRecord:
    """One logistic-normal Metropolis-Hastings update of ``pi[i]`` (in place)."""
    k = kernels or get_kernels(config.backend)
    before = state.to_params() if record else None
    cur = state.pi[i].copy()
    kk = state.k
    normals = np.ascontiguousarray(rng.standard_normal((1, max(kk - 1, 0))) * state.pi_mult[i])
    uniforms = rng.random(1)
    acc = np.zeros(1, dtype=np.uint8)
    lr = np.zeros(1)
    lh = np.zeros(1)
    if kk > 1:
        k.sweep_pi(
            state.a, state.on, state.mix, state.lam, state.pi, state.block, state.timespan,
            np.array([i], dtype=np.int64), state.pi_scales, normals, uniforms,
            config.simplex_clamp, acc, lr, lh,
        )
    eta = _kernels_py.alr(cur, config.simplex_clamp) + state.pi_scales * normals[0]
    prop = _kernels_py.alr_inverse(eta) if kk > 1 else cur
    return StepRecord(
        "membership", (i,), cur, prop, float(lr[0]), float(lh[0]),
        _accept_prob(float(lr[0])), bool(acc[0]), before,
    )


def gibbs_step_switches(
    state: ChainState, config: McmcConfig, rng: np.random.Generator,
    kernels: ModuleType | None = None,
) -> None:
    """Resample the edge switches according to ``config.switch_policy`` (in place)."""
    k = kernels or get_kernels(config.backend)
    policy = POLICIES[config.switch_policy]
    if policy == 0:
        uniforms = np.zeros((state.n, state.n))
    else:
        uniforms = rng.random((state.n, state.n))
    k.sweep_switches(
        state.a, state.on, state.mix, state.lam, state.timespan, state.sparsity, uniforms,
        policy, config.selective_cutoff,
    )


def switch_on_probability(rate_times_t: float, sparsity: float) -> float:
    """P(I_ij = 1 | a_ij = 0) for an expected count ``lambda_ij * T``."""
    e = math.exp(-rate_times_t) * sparsity
    denom = e + (1.0 - sparsity)
    return e / denom if denom > 0 else 1.0


def gibbs_step_hyper(
    state: ChainState, config: McmcConfig, rng: np.random.Generator
) -> tuple[float, float]:
    """Update (alpha, s); returns the new pair. Consumes a fixed number of draws."""
    z = rng.standard_normal()
    u = rng.random()
    if config.update_alpha and config.lambda_prior:
        lo, hi = config.alpha_support
        prop = state.alpha + config.step_alpha * z
        if lo <= prop <= hi:
            log_ratio = -(prop - state.alpha) * float(np.sum(np.log(state.lam)))
            if log_ratio >= 0 or u < math.exp(log_ratio):
                state.alpha = prop
    if config.update_sparsity:
        n = state.n
        n_on = int(state.on.sum()) - int(np.trace(state.on))
        state.sparsity = float(rng.beta(n_on + 1, n * (n - 1) - n_on + 1))
    else:
        rng.beta(1.0, 1.0)
    return state.alpha, state.sparsity


# Sweeps ------------------------------------------------------------------


@dataclass
class SweepStats:
    lam_accept: np.ndarray
    block_accept: np.ndarray
    pi_accept: np.ndarray
    block_tries: np.ndarray

    @classmethod
    def zeros(cls, n: int, k: int) -> "SweepStats":
        return cls(np.zeros(n), np.zeros(k * k), np.zeros(n), np.zeros(k * k))

    def reset(self) -> None:
        for arr in (self.lam_accept, self.block_accept, self.pi_accept, self.block_tries):
            arr[:] = 0


def sweep(
    state: ChainState, config: McmcConfig, rng: np.random.Generator, kernels: ModuleType,
    stats: SweepStats | None = None,
) -> None:
    """One full iteration in the documented block order."""
    n, k = state.n, state.k
    order_n = np.arange(n, dtype=np.int64)
    acc = np.zeros(n, dtype=np.uint8)
    lr = np.zeros(n)

    normals = rng.standard_normal(n)
    uniforms = rng.random(n)
    kernels.sweep_lambda(
        state.a, state.on, state.mix, state.lam, state.timespan, _alpha_prior(state, config),
        config.lambda_floor, config.lambda_ceiling, order_n, state.step_lam, normals,
        uniforms, acc, lr,
    )
    if stats is not None:
        stats.lam_accept += acc

    kk = k * k
    normals = rng.standard_normal(kk)
    uniforms = rng.random(kk)
    if not state.fixed.all():
        acc_b = np.zeros(kk, dtype=np.uint8)
        lr_b = np.zeros(kk)
        kernels.sweep_block(
            state.a, state.on, state.mix, state.lam, state.pi, state.block, state.timespan,
            np.arange(kk, dtype=np.int64), state.step_block, normals, uniforms, state.fixed,
            acc_b, lr_b,
        )
        # Drop accumulated rounding from incremental updates.
        state.recompute_mix()
        if stats is not None:
            stats.block_accept += acc_b
            stats.block_tries += 1 - state.fixed

    if k > 1:
        normals = rng.standard_normal((n, k - 1)) * state.pi_mult[:, None]
        uniforms = rng.random(n)
        lh = np.zeros(n)
        kernels.sweep_pi(
            state.a, state.on, state.mix, state.lam, state.pi, state.block, state.timespan,
            order_n, state.pi_scales, np.ascontiguousarray(normals), uniforms,
            config.simplex_clamp, acc, lr, lh,
        )
        if stats is not None:
            stats.pi_accept += acc

    gibbs_step_switches(state, config, rng, kernels)
    gibbs_step_hyper(state, config, rng)


def _adapt(state: ChainState, stats: SweepStats, window: int) -> None:
    def factor(rate):
        return np.where(rate < 0.2, 0.7, np.where(rate > 0.5, 1.3, 1.0))

    state.step_lam *= factor(stats.lam_accept / window)
    state.pi_mult *= factor(stats.pi_accept / window)
    tries = stats.block_tries.sum()
    if tries:
        state.step_block *= float(factor(stats.block_accept.sum() / tries))


# Chains ------------------------------------------------------------------


@dataclass
class ChainResult:
    lam: np.ndarray
    pi: np.ndarray
    block: np.ndarray
    alpha: np.ndarray
    sparsity: np.ndarray
    log_joint: np.ndarray
    acceptance: dict[str, float]
    final_state: ChainState


def run_chain(
    state: ChainState, config: McmcConfig, rng: np.random.Generator,
    kernels: ModuleType | None = None, iterations: int | None = None,
    burn_in: int | None = None, adapt: bool | None = None,
) -> ChainResult:
    kernels = kernels or get_kernels(config.backend)
    iterations = config.iterations if iterations is None else iterations
    burn_in = config.burn_in if burn_in is None else burn_in
    adapt = config.adapt if adapt is None else adapt
    n, k = state.n, state.k
    keep = list(range(burn_in, iterations, config.keep_every))
    s = len(keep)
    lam_s = np.empty((s, n))
    pi_s = np.empty((s, n, k))
    block_s = np.empty((s, k, k))
    alpha_s = np.empty(s)
    sp_s = np.empty(s)
    trace = np.empty(iterations)
    window = SweepStats.zeros(n, k)
    post = SweepStats.zeros(n, k)
    slot = 0
    with np.errstate(divide="ignore"):
        for t in range(iterations):
            in_burn = t < burn_in
            sweep(state, config, rng, kernels, window if in_burn else post)
            trace[t] = state_log_joint(state, config, kernels)
            if in_burn and adapt and (t + 1) % config.adapt_interval == 0:
                _adapt(state, window, config.adapt_interval)
                window.reset()
            if not in_burn and (t - burn_in) % config.keep_every == 0:
                lam_s[slot] = state.lam
                pi_s[slot] = state.pi
                block_s[slot] = state.block
                alpha_s[slot] = state.alpha
                sp_s[slot] = state.sparsity
                slot += 1
    n_post = max(iterations - burn_in, 1)
    tries = post.block_tries.sum()
    acceptance = {
        "lambda": float(post.lam_accept.mean() / n_post),
        "membership": float(post.pi_accept.mean() / n_post) if k > 1 else float("nan"),
        "block": float(post.block_accept.sum() / tries) if tries else float("nan"),
    }
    return ChainResult(lam_s, pi_s, block_s, alpha_s, sp_s, trace, acceptance, state)


def select_chain(traces: list[np.ndarray] | np.ndarray, tail: float = 0.1) -> int:
    """Index of the chain with the highest mean log joint over its final ``tail`` fraction."""
    scores = []
    for tr in traces:
        tr = np.asarray(tr, dtype=float)
        m = max(1, int(math.ceil(tail * tr.shape[0])))
        scores.append(float(np.mean(tr[-m:])))
    return int(np.argmax(scores))


def master_seed(seed: SeedLike) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(as_generator(seed).integers(0, 2**63 - 1))


def run_mcmc(
    net: InfluenceNetwork,
    k: int,
    config: McmcConfig | None = None,
    seed: SeedLike = None,
    reference: np.ndarray | None = None,
    init_params: HmmbParams | None = None,
):
    """Run ``config.chains`` independently initialized chains and keep the best one.

    ``reference`` (true block diagonal) triggers :func:`rescale_to_reference`
    on the returned samples. ``init_params`` bypasses the initialization
    strategy, which is mainly useful for calibration tests.
    """
    from .init import init_chain
    from .posterior import HmmbPosterior, rescale_to_reference

    config = config or McmcConfig()
    kernels = get_kernels(config.backend)
    master = master_seed(seed)
    results = []
    fixed_diag = None
    cache: dict = {}
    shared_rng = derive_rng(master, "init")
    for c in range(config.chains):
        rng = derive_rng(master, "chain", c)
        if init_params is not None:
            params = init_params
        else:
            params, fixed_diag = init_chain(
                net, k, config, rng if config.init == "none" else shared_rng,
                cache=cache, kernels=kernels,
            )
        state = ChainState.from_params(net, params, config)
        results.append(run_chain(state, config, rng, kernels))
    traces = [r.log_joint for r in results]
    best = select_chain(traces)
    r = results[best]
    post = HmmbPosterior(
        lam=r.lam,
        pi=r.pi,
        block=r.block,
        alpha=r.alpha,
        sparsity=r.sparsity,
        log_joint=np.vstack(traces),
        selected_chain=best,
        acceptance=[res.acceptance for res in results],
        diagnostics={
            "backend": backend_name(kernels),
            "init": config.init,
            "iterations": config.iterations,
            "burn_in": config.burn_in,
            "fixed_block_diagonal": None if fixed_diag is None else list(map(float, fixed_diag)),
            "final_step_block": [float(res.final_state.step_block) for res in results],
        },
    )
    if reference is not None:
        post = rescale_to_reference(post, reference)
    return post
