"""Independent reference computations shared by unit and acceptance tests.

Nothing here calls the package's sampler kernels or Fisher code; each
oracle recomputes its quantity from first principles with scipy.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from netcausal.netcore import HmmbParams, InfluenceNetwork, sample_truncated_power_law


def log_joint(params: HmmbParams, a: np.ndarray, lo: float = 0.0, hi: float = math.inf,
              alpha: float | None = None) -> float:
    """Poisson edges on on-switches, Bernoulli switches, power-law activity prior."""
    n = params.n
    alpha = params.alpha if alpha is None else alpha
    if np.any(params.lam < lo) or np.any(params.lam > hi) or np.any(params.block < 0):
        return -math.inf
    total = 0.0
    n_on = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if params.switches[i, j]:
                n_on += 1
                rate = params.timespan * params.lam[i] * params.lam[j] * (
                    params.pi[i] @ params.block @ params.pi[j])
                if rate <= 0:
                    if a[i, j] > 0:
                        return -math.inf
                    continue
                total += stats.poisson.logpmf(a[i, j], rate)
            elif a[i, j] > 0:
                return -math.inf
    s = params.sparsity
    total += n_on * math.log(s) + (n * (n - 1) - n_on) * math.log1p(-s)
    total -= alpha * float(np.sum(np.log(params.lam)))
    return total


def logistic_normal_logpdf(p: np.ndarray, center: np.ndarray, scales: np.ndarray) -> float:
    """Density on the simplex of alr^-1(Normal(alr(center), diag(scales^2)))."""
    eta = np.log(p[:-1]) - math.log(p[-1])
    mu = np.log(center[:-1]) - math.log(center[-1])
    dens = float(np.sum(stats.norm.logpdf(eta, mu, scales)))
    # Jacobian of alr on the free coordinates is 1 / prod(p)
    return dens - float(np.sum(np.log(p)))


def mh_accept_prob(record, a: np.ndarray, lo: float, hi: float, scales=None,
                   alpha: float | None = None) -> float:
    """min(1, ratio) for a recorded step, recomputed from ``record.before``."""
    before = record.before
    if record.kind == "lambda":
        lam = before.lam.copy()
        lam[record.index[0]] = record.proposed[0]
        after = before.replace(lam=lam) if lam[record.index[0]] > 0 else None
        log_q = 0.0
    elif record.kind == "block":
        block = before.block.copy()
        block[record.index] = record.proposed[0]
        after = before.replace(block=block) if record.proposed[0] >= 0 else None
        log_q = 0.0
    else:
        i = record.index[0]
        pi = before.pi.copy()
        pi[i] = record.proposed
        after = before.replace(pi=pi)
        log_q = (logistic_normal_logpdf(record.current, record.proposed, scales)
                 - logistic_normal_logpdf(record.proposed, record.current, scales))
    if after is None:
        return 0.0
    ratio = log_joint(after, a, lo, hi, alpha) + log_q - log_joint(before, a, lo, hi, alpha)
    if math.isnan(ratio):
        return 0.0
    return 1.0 if ratio >= 0 else math.exp(ratio)


def expected_observed_information(params: HmmbParams, i: int, draws: int,
                                  rng: np.random.Generator, h: float = 1e-4) -> np.ndarray:
    """Monte Carlo mean of the finite-difference negative Hessian in pi_i.

    Coordinates are the first K-1 entries of pi_i; the last is one minus
    their sum. Networks are drawn with the switches held at ``params``.
    """
    k = params.k
    on = params.switches.copy()
    np.fill_diagonal(on, False)
    out_j = np.flatnonzero(on[i])
    in_j = np.flatnonzero(on[:, i])
    t, lam, b, pi = params.timespan, params.lam, params.block, params.pi

    def rates(free):
        p = np.append(free, 1.0 - np.sum(free))
        r_out = t * lam[i] * lam[out_j] * (pi[out_j] @ b.T @ p)
        r_in = t * lam[i] * lam[in_j] * (pi[in_j] @ b @ p)
        return np.concatenate([r_out, r_in])

    base = pi[i, :-1].astype(float)
    mean_rate = rates(base)
    counts = rng.poisson(mean_rate, size=(draws, mean_rate.size)).astype(float)

    def loglik(free):
        r = rates(free)
        return counts @ np.log(r) - r.sum()

    m = k - 1
    hess = np.zeros((draws, m, m))
    eye = np.eye(m) * h
    for u in range(m):
        for v in range(m):
            hess[:, u, v] = (loglik(base + eye[u] + eye[v]) - loglik(base + eye[u] - eye[v])
                             - loglik(base - eye[u] + eye[v]) + loglik(base - eye[u] - eye[v])
                             ) / (4 * h * h)
    return -hess.mean(axis=0)


def sbc_ranks(kernels, replications: int, seed: int, n: int = 8, k: int = 2,
              burn_in: int = 200, thin: int = 20, samples: int = 9) -> dict[str, np.ndarray]:
    """Simulation-based calibration ranks for lambda_0 and pi_00.

    B, switches, sparsity and T are fixed at the truth; lambda has a
    truncated power-law prior and each pi_i a flat Dirichlet prior. Each
    replication draws a truth from the prior, a network from the truth, and
    runs the lambda and pi kernels from an independent prior draw.
    """
    rng = np.random.default_rng(seed)
    alpha, lo, hi, t = 2.5, 1.0, 5.0, 0.5
    block = np.array([[1.0, 0.2], [0.3, 0.8]]) if k == 2 else np.eye(k)
    on = np.ones((n, n), dtype=bool)
    np.fill_diagonal(on, False)
    order = np.arange(n, dtype=np.int64)
    steps = np.full(n, 0.6)
    scales = np.full(k - 1, 1.0)
    ranks_lam = np.empty(replications, dtype=int)
    ranks_pi = np.empty(replications, dtype=int)
    for r in range(replications):
        lam_true = sample_truncated_power_law(n, alpha, lo, hi, rng)
        pi_true = rng.dirichlet(np.ones(k), size=n)
        rate = t * np.outer(lam_true, lam_true) * (pi_true @ block @ pi_true.T)
        a = np.where(on, rng.poisson(rate), 0).astype(np.float64)
        lam = sample_truncated_power_law(n, alpha, lo, hi, rng)
        pi = np.ascontiguousarray(rng.dirichlet(np.ones(k), size=n))
        mix = np.ascontiguousarray(pi @ block @ pi.T)
        on8 = on.astype(np.uint8)
        acc = np.zeros(n, dtype=np.uint8)
        lr = np.zeros(n)
        lh = np.zeros(n)
        kept_lam, kept_pi = [], []
        for it in range(burn_in + thin * samples):
            kernels.sweep_lambda(a, on8, mix, lam, t, alpha, lo, hi, order, steps,
                                 rng.standard_normal(n), rng.random(n), acc, lr)
            kernels.sweep_pi(a, on8, mix, lam, pi, block, t, order, scales,
                             np.ascontiguousarray(rng.standard_normal((n, k - 1))),
                             rng.random(n), 1e-12, acc, lr, lh)
            if it >= burn_in and (it - burn_in + 1) % thin == 0:
                kept_lam.append(lam[0])
                kept_pi.append(pi[0, 0])
        ranks_lam[r] = int(np.sum(np.array(kept_lam) < lam_true[0]))
        ranks_pi[r] = int(np.sum(np.array(kept_pi) < pi_true[0, 0]))
    return {"lambda": ranks_lam, "pi": ranks_pi}


def rank_uniformity_pvalue(ranks: np.ndarray, bins: int) -> float:
    counts = np.bincount(ranks, minlength=bins)
    return float(stats.chisquare(counts).pvalue)


def dense(net: InfluenceNetwork) -> np.ndarray:
    return net.to_dense().astype(float)


def random_table(rng: np.random.Generator, n: int, max_in: int, exposure_fn: str):
    """Random integer-weighted network with bounded in-degree and a linear science table."""
    from netcausal.science import OutcomeModelSpec, build_science

    a = np.zeros((n, n))
    for i in range(n):
        deg = int(rng.integers(0, max_in + 1))
        src = rng.choice([j for j in range(n) if j != i], size=min(deg, n - 1), replace=False)
        a[src, i] = rng.integers(1, 4, size=src.size)
    net = InfluenceNetwork.from_dense(a)
    model = OutcomeModelSpec(tau=float(rng.normal(5, 2)), gamma=float(rng.normal(0.5, 0.3)),
                             betas=2.0, mu=1.0, noise_sd=1.0, exposure_fn=exposure_fn,
                             confounder="independent")
    return build_science(net, model, seed=rng)


def kind_specs(table, rng: np.random.Generator) -> list:
    """One spec per implemented estimand kind, with random assignments."""
    from netcausal.science import BernoulliStrategy, EstimandSpec

    n = table.n
    z = (rng.random(n) < 0.4).astype(int)
    z[int(rng.integers(n))] = 1
    a = table.net.to_dense()
    drop = (rng.random(a.shape) < 0.3) & (a > 0)
    other = InfluenceNetwork.from_dense(np.where(drop, 0.0, a + (rng.random(a.shape) < 0.05)
                                                 * (1 - np.eye(n))))
    return [
        EstimandSpec("primary_avg"),
        EstimandSpec("primary_conditional", z=z),
        EstimandSpec("fixed_primary", z=z),
        EstimandSpec("fixed_primary_no_peer", z=z),
        EstimandSpec("fixed_peer", z=z),
        EstimandSpec("fixed_total", z=z),
        EstimandSpec("k_neighbors", k=1),
        EstimandSpec("k_neighbors", k=2),
        EstimandSpec("k_neighbors_atleast", k=2),
        EstimandSpec("total_by_hop", z=z, n=1),
        EstimandSpec("network_manipulation", z=z, network=other),
        EstimandSpec("strategy_direct", strategy=BernoulliStrategy(0.3)),
        EstimandSpec("strategy_indirect", strategy=BernoulliStrategy(0.6),
                     strategy_alt=BernoulliStrategy(0.2)),
    ]
