"""Monte Carlo EM: gradient ascent on (lambda, B), sampling on (pi, I)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import NumericError
from ..netcore import InfluenceNetwork
from ..seeding import SeedLike, derive_rng
from .backend import get_kernels
from .gradients import block_gradient, lambda_gradient
from .init import init_chain
from .sampler import (
    ChainState,
    McmcConfig,
    SweepStats,
    gibbs_step_hyper,
    gibbs_step_switches,
    master_seed,
    state_log_joint,
)

Schedule = Callable[[int], float]


def constant_schedule(value: float) -> Schedule:
    return lambda t: value


@dataclass(frozen=True)
class McemResult:
    lam_path: np.ndarray
    block_path: np.ndarray
    pi: np.ndarray
    log_joint: np.ndarray
    iterations_to_mode: int
    halvings: int
    fixed_block_diagonal: np.ndarray | None


def _preconditioned_steps(state: ChainState) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate step scales from the expected-count curvature."""
    on = state.on.astype(bool)
    mixm = np.where(on, state.mix, 0.0)
    r = state.timespan * (mixm @ state.lam + mixm.T @ state.lam)
    lam_scale = np.divide(state.lam, r, out=np.zeros_like(r), where=r > 0)
    w = np.where(on, state.timespan * np.outer(state.lam, state.lam), 0.0)
    curv = state.pi.T @ w @ state.pi
    blk = np.maximum(state.block, 1e-3)
    block_scale = np.divide(blk, curv, out=np.zeros_like(curv), where=curv > 0)
    return lam_scale, block_scale


def gradient_step(
    state: ChainState, config: McmcConfig, eta_lam: float, eta_block: float,
    max_halvings: int = 10,
) -> int:
    """Batch ascent step on lambda and B (in place); returns the number of halvings."""
    alpha = state.alpha if config.lambda_prior else 0.0
    g_lam = lambda_gradient(state.lam, state.pi, state.block, state.a, state.on,
                            state.timespan, alpha)
    g_blk = block_gradient(state.block, state.pi, state.lam, state.a, state.on, state.timespan)
    g_blk = np.where(state.fixed.reshape(state.k, state.k).astype(bool), 0.0, g_blk)
    lam_scale, block_scale = _preconditioned_steps(state)
    for halving in range(max_halvings + 1):
        f = 0.5**halving
        lam = state.lam + f * eta_lam * lam_scale * g_lam
        blk = state.block + f * eta_block * block_scale * g_blk
        if np.all(np.isfinite(lam)) and np.all(lam > 0) and np.all(np.isfinite(blk)):
            state.lam[:] = np.maximum(lam, config.lambda_floor)
            # projected ascent: entries pushed below zero sit on the boundary
            state.block[:] = np.maximum(blk, 0.0)
            state.recompute_mix()
            return halving
    raise NumericError(
        f"MCEM gradient step diverged after {max_halvings} halvings "
        f"(min lambda proposal {float(np.min(lam)):.3g})"
    )


def _mode_iteration(trace: np.ndarray, rel: float = 0.01) -> int:
    finite = np.isfinite(trace)
    if not finite.any():
        return len(trace)
    tail = trace[-max(1, len(trace) // 10) :]
    target = float(np.mean(tail))
    gap = abs(target - float(trace[finite][0]))
    hits = np.flatnonzero(trace >= target - rel * gap)
    return int(hits[0]) + 1 if hits.size else len(trace)


def run_mcem(
    net: InfluenceNetwork,
    k: int,
    config: McmcConfig | None = None,
    seed: SeedLike = None,
    lambda_schedule: Schedule | None = None,
    block_schedule: Schedule | None = None,
) -> McemResult:
    """Alternate a preconditioned gradient step on (lambda, B) with MH sweeps on pi and I.

    The schedules return the relative step size at iteration ``t`` (1.0 is a
    full Newton-like step on each coordinate).
    """
    config = config or McmcConfig(chains=1)
    lambda_schedule = lambda_schedule or constant_schedule(0.5)
    block_schedule = block_schedule or constant_schedule(0.5)
    kernels = get_kernels(config.backend)
    master = master_seed(seed)
    rng = derive_rng(master, "mcem")
    params, fixed_diag = init_chain(net, k, config, derive_rng(master, "init"), kernels=kernels)
    state = ChainState.from_params(net, params, config)
    n = state.n
    it = config.iterations
    lam_path = np.empty((it, n))
    block_path = np.empty((it, k, k))
    keep = it - config.burn_in
    pi_s = np.empty((keep, n, k))
    trace = np.empty(it)
    halvings = 0
    stats = SweepStats.zeros(n, k)
    order = np.arange(n, dtype=np.int64)
    acc = np.zeros(n, dtype=np.uint8)
    lr = np.zeros(n)
    lh = np.zeros(n)
    with np.errstate(divide="ignore"):
        for t in range(it):
            halvings += gradient_step(state, config, lambda_schedule(t), block_schedule(t))
            if k > 1:
                normals = rng.standard_normal((n, k - 1)) * state.pi_mult[:, None]
                uniforms = rng.random(n)
                kernels.sweep_pi(
                    state.a, state.on, state.mix, state.lam, state.pi, state.block,
                    state.timespan, order, state.pi_scales, np.ascontiguousarray(normals),
                    uniforms, config.simplex_clamp, acc, lr, lh,
                )
                stats.pi_accept += acc
                if config.adapt and t < config.burn_in and (t + 1) % config.adapt_interval == 0:
                    rate = stats.pi_accept / config.adapt_interval
                    state.pi_mult *= np.where(rate < 0.2, 0.7, np.where(rate > 0.5, 1.3, 1.0))
                    stats.reset()
            gibbs_step_switches(state, config, rng, kernels)
            gibbs_step_hyper(state, config, rng)
            lam_path[t] = state.lam
            block_path[t] = state.block
            trace[t] = state_log_joint(state, config, kernels)
            if t >= config.burn_in:
                pi_s[t - config.burn_in] = state.pi
    return McemResult(
        lam_path=lam_path,
        block_path=block_path,
        pi=pi_s,
        log_joint=trace,
        iterations_to_mode=_mode_iteration(trace),
        halvings=halvings,
        fixed_block_diagonal=fixed_diag,
    )


__all__ = ["McemResult", "run_mcem", "gradient_step", "constant_schedule"]
