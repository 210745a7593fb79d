"""Network potential outcomes ("the science") and causal estimands.

The outcome model for unit ``i`` is

    Y_i = tau * z_i + gamma * g(s_i) + sum_m beta_m * h(x_mi) + mu + eps_i,
    s_i = sum_{j in N_-i} a_ji * z_j,

with ``g`` the identity or a guarded log and ``h`` the identity or a log.
A :class:`ScienceTable` freezes the covariates and one noise draw per unit,
so every counterfactual query for a unit reuses the same ``eps_i`` and all
same-unit differences are noise free.

Estimands come with two routes: a shortcut (closed form or a reduced
enumeration) and a brute-force oracle that enumerates assignments on each
unit's open neighborhood and applies the defining average literally.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, EnumerationCapExceeded
from .netcore import HmmbParams, InfluenceNetwork, NeighborhoodSpec, n_hop_neighborhood
from .seeding import SeedLike, as_generator

EXPOSURE_FNS = ("sum", "log_sum")
COVARIATE_FNS = ("identity", "log")
CONFOUNDERS = ("none", "treatment_likelihood", "activity", "membership", "independent")
ESTIMAND_KINDS = (
    "primary_avg",
    "primary_conditional",
    "k_neighbors",
    "k_neighbors_atleast",
    "fixed_primary",
    "fixed_primary_no_peer",
    "fixed_peer",
    "fixed_total",
    "total_by_hop",
    "strategy_direct",
    "strategy_indirect",
    "network_manipulation",
)
DEFAULT_ENUMERATION_CAP = 2**12
LOG_SUM_ZERO_CONVENTION = "g(0) = 0 when the summed exposure is zero"
LOG_SHIFT_FLOOR = 1e-6


# Outcome model ---------------------------------------------------------------


@dataclass(frozen=True)
class OutcomeModelSpec:
    tau: float = 5.0
    gamma: float = 0.1
    betas: float | tuple[float, ...] = 5.0
    mu: float = 3.0
    noise_mean: float = 0.0
    noise_sd: float = 1.0
    exposure_fn: str = "sum"
    covariate_fn: str = "identity"
    confounder: str = "none"
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd must be >= 0")
        if self.exposure_fn not in EXPOSURE_FNS:
            raise ConfigurationError(f"exposure_fn must be one of {EXPOSURE_FNS}")
        if self.covariate_fn not in COVARIATE_FNS:
            raise ConfigurationError(f"covariate_fn must be one of {COVARIATE_FNS}")
        if self.confounder not in CONFOUNDERS:
            raise ConfigurationError(f"confounder must be one of {CONFOUNDERS}")
        if not np.isscalar(self.betas):
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    @property
    def beta_vector(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.betas, dtype=float))

    @classmethod
    def confounder_study(cls, confounder: str = "none", k: int = 4) -> "OutcomeModelSpec":
        """Linear model of the confounder study: tau=5, gamma=0.1, mu=3, sigma^2=1."""
        betas: float | tuple[float, ...] = 5.0
        if confounder == "membership":
            betas = tuple(np.linspace(0.0, 6.0, k)) if k != 4 else (0.0, 2.0, 4.0, 6.0)
        return cls(tau=5.0, gamma=0.1, betas=betas, mu=3.0, noise_mean=0.0, noise_sd=1.0,
                   confounder=confounder)

    @classmethod
    def factorial(
        cls,
        confounder: str = "none",
        covariate_fn: str = "identity",
        exposure_fn: str = "sum",
        k: int = 4,
    ) -> "OutcomeModelSpec":
        """Factorial-study truth: mu_eps=2, sigma^2=1.2, beta_pi = (0..K-1) * 6/(K-1)."""
        if confounder not in ("none", "activity", "membership"):
            raise ConfigurationError("the factorial truth uses none, activity or membership")
        betas: float | tuple[float, ...] = 5.0
        if confounder == "membership":
            betas = tuple(np.arange(k) * 6.0 / max(k - 1, 1))
        return cls(tau=5.0, gamma=0.1, betas=betas, mu=3.0, noise_mean=2.0,
                   noise_sd=math.sqrt(1.2), exposure_fn=exposure_fn, covariate_fn=covariate_fn,
                   confounder=confounder)

    def to_json(self) -> dict:
        return {
            "tau": self.tau, "gamma": self.gamma,
            "betas": list(self.beta_vector) if not np.isscalar(self.betas) else float(self.betas),
            "mu": self.mu, "noise_mean": self.noise_mean, "noise_sd": self.noise_sd,
            "exposure_fn": self.exposure_fn, "covariate_fn": self.covariate_fn,
            "confounder": self.confounder, "hops": self.neighborhood.hops,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "OutcomeModelSpec":
        betas = doc.get("betas", 5.0)
        return cls(
            tau=float(doc["tau"]), gamma=float(doc["gamma"]),
            betas=float(betas) if np.isscalar(betas) else tuple(betas),
            mu=float(doc["mu"]), noise_mean=float(doc.get("noise_mean", 0.0)),
            noise_sd=float(doc["noise_sd"]), exposure_fn=doc.get("exposure_fn", "sum"),
            covariate_fn=doc.get("covariate_fn", "identity"),
            confounder=doc.get("confounder", "none"),
            neighborhood=NeighborhoodSpec(int(doc.get("hops", 1))),
        )


def peer_transform(s: np.ndarray | float, fn: str) -> np.ndarray | float:
    """g(s): identity, or log with g(0) = 0."""
    if fn == "sum":
        return s
    s_arr = np.asarray(s, dtype=float)
    out = np.zeros_like(s_arr)
    np.log(s_arr, out=out, where=s_arr > 0)
    return out if out.ndim else float(out)


def log_covariates(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Column-wise log; a column with entries <= 0 is first shifted by (1e-6 - min)."""
    x = np.asarray(x, dtype=float)
    cols = x.reshape(x.shape[0], -1).copy()
    shifted = False
    for c in range(cols.shape[1]):
        lo = cols[:, c].min() if cols.shape[0] else 1.0
        if lo <= 0:
            cols[:, c] += LOG_SHIFT_FLOOR - lo
            shifted = True
    return np.log(cols).reshape(x.shape), shifted


def covariate_transform(x: np.ndarray, fn: str) -> tuple[np.ndarray, bool]:
    if fn == "identity":
        return np.asarray(x, dtype=float), False
    return log_covariates(x)


def exposures(net: InfluenceNetwork, z: np.ndarray) -> np.ndarray:
    """Summed exposure s_i = sum_j a_ji z_j for every unit (A' z)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (net.n,):
        raise DataError(f"assignment has length {z.shape}, network has {net.n} units")
    return np.asarray(net.matrix.T @ z, dtype=float)


def exposure(net: InfluenceNetwork, z: np.ndarray, i: int, fn: str = "sum") -> float:
    """Exposure of unit ``i`` to treated neighbors, on the scale of ``fn``."""
    s = float(exposures(net, z)[i])
    return float(peer_transform(s, fn))


# Science table --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScienceTable:
    """Frozen covariates and per-unit noise for one network and outcome model."""

    net: InfluenceNetwork
    model: OutcomeModelSpec
    covariates: np.ndarray  # (n, d); d = 0 when the model has no covariate term
    noise: np.ndarray  # (n,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.net.n
        cov = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        object.__setattr__(self, "covariates", cov)
        if self.noise.shape != (n,):
            raise ConfigurationError("noise must hold one draw per unit")
        if cov.shape[1] and cov.shape[1] != self.model.beta_vector.size:
            raise ConfigurationError(
                f"{cov.shape[1]} covariate columns but {self.model.beta_vector.size} betas"
            )
        h, shifted = covariate_transform(cov, self.model.covariate_fn)
        effect = h @ self.model.beta_vector if cov.shape[1] else np.zeros(n)
        object.__setattr__(self, "_base", effect + self.model.mu + self.noise)
        meta = dict(self.metadata)
        meta.setdefault("log_sum_convention", LOG_SUM_ZERO_CONVENTION)
        if shifted:
            meta["covariate_log_shifted"] = True
        object.__setattr__(self, "metadata", meta)
        object.__setattr__(self, "_neighborhoods", {})
        object.__setattr__(self, "_in_weights", {})

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def base(self) -> np.ndarray:
        """Outcome part that does not depend on any treatment: beta'h(x) + mu + eps."""
        return self._base

    def neighborhood(self, i: int) -> list[int]:
        cache = self._neighborhoods
        if i not in cache:
            cache[i] = n_hop_neighborhood(self.net, i, self.model.neighborhood)
        return cache[i]

    def open_neighborhood(self, i: int) -> list[int]:
        return self.neighborhood(i)[1:]

    def in_weights(self, i: int) -> np.ndarray:
        """a_ji for j in the open neighborhood of ``i`` (zero beyond the first hop)."""
        cache = self._in_weights
        if i not in cache:
            col = self.net.matrix[:, [i]].toarray().ravel()
            w = col[self.open_neighborhood(i)]
            w.setflags(write=False)
            cache[i] = w
        return cache[i]

    def treatment_weights(self) -> np.ndarray | None:
        w = self.metadata.get("treatment_weights")
        return None if w is None else np.asarray(w, dtype=float)


def build_science(
    net: InfluenceNetwork,
    model: OutcomeModelSpec,
    covariate_source: HmmbParams | Mapping | np.ndarray | None = None,
    seed: SeedLike = None,
) -> ScienceTable:
    """Draw (or look up) covariates and freeze eps_i ~ Normal(mu_eps, sigma_eps^2).

    ``covariate_source`` supplies network parameters for the activity and
    membership confounders (HmmbParams or a mapping with ``lambda``/``pi``), or
    explicit covariate values as an array.
    """
    rng = as_generator(seed)
    n = net.n
    metadata: dict = {}
    conf = model.confounder
    if isinstance(covariate_source, np.ndarray):
        x = covariate_source.astype(float).reshape(n, -1)
    elif conf == "none":
        x = np.zeros((n, 0))
    elif conf == "independent":
        x = rng.normal(1.0, 1.0, size=(n, 1))
    elif conf == "treatment_likelihood":
        x = rng.normal(0.0, math.sqrt(2.0), size=(n, 1))
        metadata["treatment_weights"] = np.exp(-x[:, 0]).tolist()
    else:
        lam, pi = _network_covariates(covariate_source)
        if conf == "activity":
            if lam is None:
                raise ConfigurationError("activity confounder needs activity levels (lambda)")
            x = np.asarray(lam, dtype=float).reshape(n, 1)
        else:
            if pi is None:
                raise ConfigurationError("membership confounder needs memberships (pi)")
            x = np.asarray(pi, dtype=float).reshape(n, -1)
    if x.shape[0] != n:
        raise DataError(f"covariates have {x.shape[0]} rows for {n} units")
    noise = rng.normal(model.noise_mean, model.noise_sd, size=n) if model.noise_sd > 0 else \
        np.full(n, float(model.noise_mean))
    return ScienceTable(net=net, model=model, covariates=x, noise=noise, metadata=metadata)


def _network_covariates(source) -> tuple[np.ndarray | None, np.ndarray | None]:
    if source is None:
        return None, None
    if isinstance(source, HmmbParams):
        return source.lam, source.pi
    lam = source.get("lambda", source.get("lam"))
    return lam, source.get("pi")


def potential_outcome(
    table: ScienceTable, i: int, z_self: int, z_neighbors: Sequence[float] | np.ndarray
) -> float:
    """Y_i for own treatment ``z_self`` and ``z_neighbors`` aligned with the open neighborhood."""
    zn = np.asarray(z_neighbors, dtype=float)
    w = table.in_weights(i)
    if zn.shape != w.shape:
        raise DataError(f"unit {i}: expected {w.size} neighbor assignments, got {zn.size}")
    m = table.model
    g = peer_transform(float(w @ zn), m.exposure_fn)
    return float(m.tau * z_self + m.gamma * g + table.base[i])


def outcomes(table: ScienceTable, z: np.ndarray, net: InfluenceNetwork | None = None) -> np.ndarray:
    """Y_i(z) for every unit, optionally on a manipulated network with the same units."""
    z = np.asarray(z, dtype=float)
    m = table.model
    g = peer_transform(exposures(net or table.net, z), m.exposure_fn)
    return m.tau * z + m.gamma * np.asarray(g) + table.base


def observe(table: ScienceTable, z: np.ndarray) -> np.ndarray:
    """Observed outcome vector for a binary assignment ``z``."""
    z = np.asarray(z)
    if z.shape != (table.n,) or not np.isin(z, (0, 1)).all():
        raise DataError("assignment must be a binary vector with one entry per unit")
    return outcomes(table, z)


# Strategies -----------------------------------------------------------------


class Strategy(Protocol):
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray: ...


@dataclass(frozen=True)
class BernoulliStrategy:
    """Treat every unit independently with probability ``p``."""

    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError("Bernoulli strategy needs p in [0, 1]")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return (rng.random(n) < self.p).astype(np.int8)


@dataclass(frozen=True)
class FixedCountStrategy:
    """Treat exactly ``count`` units chosen uniformly."""

    count: int

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if not 0 <= self.count <= n:
            raise ConfigurationError(f"cannot treat {self.count} of {n} units")
        z = np.zeros(n, dtype=np.int8)
        z[rng.choice(n, size=self.count, replace=False)] = 1
        return z


@dataclass(frozen=True)
class CallableStrategy:
    fn: Callable[[np.random.Generator, int], np.ndarray]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.fn(rng, n), dtype=np.int8)


# Estimands ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EstimandSpec:
    kind: str
    z: np.ndarray | None = None
    k: int | None = None
    n: int | None = None
    network: InfluenceNetwork | None = None
    strategy: Strategy | None = None
    strategy_alt: Strategy | None = None

    def __post_init__(self) -> None:
        if self.kind not in ESTIMAND_KINDS:
            raise ConfigurationError(f"unknown estimand kind {self.kind!r}")
        needs_z = self.kind.startswith("fixed_") or self.kind in (
            "primary_conditional", "total_by_hop", "network_manipulation",
        )
        if needs_z and self.z is None:
            raise ConfigurationError(f"{self.kind} needs an assignment z")
        if self.z is not None:
            z = np.asarray(self.z)
            if not np.isin(z, (0, 1)).all():
                raise ConfigurationError("estimand assignment must be binary")
            object.__setattr__(self, "z", z.astype(np.int8))
        if self.kind in ("k_neighbors", "k_neighbors_atleast") and (self.k is None or self.k < 1):
            raise ConfigurationError(f"{self.kind} needs k >= 1")
        if self.kind == "total_by_hop" and (self.n is None or self.n < 0):
            raise ConfigurationError("total_by_hop needs n >= 0")
        if self.kind == "network_manipulation" and self.network is None:
            raise ConfigurationError("network_manipulation needs the manipulated network")
        if self.kind == "strategy_direct" and self.strategy is None:
            raise ConfigurationError("strategy_direct needs a strategy")
        if self.kind == "strategy_indirect" and (self.strategy is None or self.strategy_alt is None):
            raise ConfigurationError("strategy_indirect needs two strategies")

    def label(self) -> str:
        extra = ""
        if self.k is not None:
            extra = f"(k={self.k})"
        elif self.n is not None:
            extra = f"(n={self.n})"
        return self.kind + extra


@dataclass(frozen=True)
class McConfig:
    draws: int = 10_000
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP


@dataclass(frozen=True)
class EstimandValue:
    value: float
    se: float = 0.0
    method: str = "analytic"

    def __float__(self) -> float:
        return float(self.value)


def _check_z(table: ScienceTable, z: np.ndarray) -> None:
    if z.shape != (table.n,):
        raise ConfigurationError(f"assignment length {z.size} does not match {table.n} units")


def compute_estimand(
    table: ScienceTable,
    spec: EstimandSpec,
    mc: McConfig | None = None,
    seed: SeedLike = None,
) -> EstimandValue:
    """Value of an estimand on the science table.

    Treatment-independent terms and eps_i cancel in every same-unit
    difference. Closed forms cover the linear (sum) exposure; log-sum
    exposures fall back to enumerating the needed neighbor subsets, refused
    when a unit would exceed ``mc.enumeration_cap``. Strategy estimands use
    Monte Carlo unless the strategy is Bernoulli with sum exposure.
    """
    mc = mc or McConfig()
    m = table.model
    kind = spec.kind
    if spec.z is not None:
        _check_z(table, spec.z)
    if kind in ("primary_avg", "primary_conditional", "fixed_primary", "fixed_primary_no_peer"):
        if kind.startswith("fixed") and spec.z.sum() == 0:
            raise ConfigurationError(f"{kind} needs at least one treated unit")
        return EstimandValue(float(m.tau))
    if kind in ("k_neighbors", "k_neighbors_atleast"):
        return _k_neighbors(table, spec.k, atleast=kind.endswith("atleast"), cap=mc.enumeration_cap)
    if kind == "fixed_peer":
        g = peer_transform(exposures(table.net, spec.z), m.exposure_fn)
        return EstimandValue(float(m.gamma * np.mean(g)))
    if kind == "fixed_total":
        g = peer_transform(exposures(table.net, spec.z), m.exposure_fn)
        return EstimandValue(float(np.mean(m.tau * spec.z + m.gamma * np.asarray(g))))
    if kind == "total_by_hop":
        units = units_at_hop(table.net, spec.z, spec.n)
        if units.size == 0:
            raise ConfigurationError(f"no unit lies exactly {spec.n} hops from the treated set")
        g = np.asarray(peer_transform(exposures(table.net, spec.z), m.exposure_fn))
        diff = m.tau * spec.z + m.gamma * g
        return EstimandValue(float(np.mean(diff[units])))
    if kind == "network_manipulation":
        if spec.network.n != table.n:
            raise ConfigurationError("manipulated network must have the same units")
        g_new = np.asarray(peer_transform(exposures(spec.network, spec.z), m.exposure_fn))
        g_old = np.asarray(peer_transform(exposures(table.net, spec.z), m.exposure_fn))
        return EstimandValue(float(m.gamma * np.mean(g_new - g_old)))
    if kind == "strategy_direct":
        s = spec.strategy
        if isinstance(s, BernoulliStrategy) and m.exposure_fn == "sum":
            return EstimandValue(float(np.mean(_bernoulli_direct(table, s.p))))
        return _mc_direct(table, s, mc.draws, as_generator(seed))
    if kind == "strategy_indirect":
        d, g = spec.strategy, spec.strategy_alt
        if (
            isinstance(d, BernoulliStrategy) and isinstance(g, BernoulliStrategy)
            and m.exposure_fn == "sum"
        ):
            val = 0.5 * (_bernoulli_mean_outcome(table, d.p) - _bernoulli_mean_outcome(table, g.p))
            return EstimandValue(float(np.mean(val)))
        return _mc_indirect(table, d, g, mc.draws, as_generator(seed))
    raise ConfigurationError(f"unhandled estimand kind {kind!r}")  # pragma: no cover


def _k_neighbors(table: ScienceTable, k: int, atleast: bool, cap: int) -> EstimandValue:
    m = table.model
    vals = []
    enumerated = False
    for i in range(table.n):
        w = table.in_weights(i)
        size = w.size
        if size < k:
            continue
        sizes = range(k, size + 1) if atleast else (k,)
        if m.exposure_fn == "sum":
            counts = np.array([math.comb(size, l) for l in sizes], dtype=float)
            frac = np.array([l / size for l in sizes])
            mean_g = float(counts @ frac / counts.sum()) * float(w.sum())
        else:
            total = sum(math.comb(size, l) for l in sizes)
            if total > cap:
                raise EnumerationCapExceeded(i, total, cap)
            enumerated = True
            acc = 0.0
            for l in sizes:
                for subset in itertools.combinations(range(size), l):
                    acc += float(peer_transform(float(w[list(subset)].sum()), "log_sum"))
            mean_g = acc / total
        # g(0) = 0 for both exposure forms, own treatment cancels in the difference
        vals.append(m.gamma * mean_g)
    if not vals:
        raise ConfigurationError(f"no unit has at least {k} neighbors")
    return EstimandValue(float(np.mean(vals)), method="enumeration" if enumerated else "analytic")


def units_at_hop(net: InfluenceNetwork, z: np.ndarray, hops: int) -> np.ndarray:
    """Units exactly ``hops`` influence steps downstream of the nearest treated unit."""
    dist = np.full(net.n, -1, dtype=np.int64)
    frontier = np.flatnonzero(np.asarray(z) == 1)
    dist[frontier] = 0
    m = net.matrix
    step = 0
    while frontier.size and step < hops:
        step += 1
        nxt = np.unique(m[frontier].indices) if frontier.size else frontier
        nxt = nxt[dist[nxt] < 0]
        dist[nxt] = step
        frontier = nxt
    return np.flatnonzero(dist == hops)


def _bernoulli_mean_outcome(table: ScienceTable, p: float) -> np.ndarray:
    m = table.model
    s_full = np.asarray(table.net.in_strength(), dtype=float)
    return m.tau * p + m.gamma * p * s_full + table.base


def _bernoulli_direct(table: ScienceTable, p: float) -> np.ndarray:
    """E[Y_i(Z) (2 Z_i - 1)] under independent Bernoulli(p), sum exposure."""
    m = table.model
    peer = m.gamma * p * np.asarray(table.net.in_strength(), dtype=float) + table.base
    return p * (m.tau + peer) - (1.0 - p) * peer


def _mc_direct(table: ScienceTable, s: Strategy, draws: int, rng) -> EstimandValue:
    vals = np.empty(draws)
    for d in range(draws):
        z = np.asarray(s.draw(rng, table.n))
        vals[d] = np.mean(outcomes(table, z) * (2 * z - 1))
    return EstimandValue(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)),
                         "monte_carlo")


def _mc_indirect(table: ScienceTable, d: Strategy, g: Strategy, draws: int, rng) -> EstimandValue:
    a = np.empty(draws)
    b = np.empty(draws)
    for t in range(draws):
        a[t] = np.mean(outcomes(table, np.asarray(d.draw(rng, table.n))))
        b[t] = np.mean(outcomes(table, np.asarray(g.draw(rng, table.n))))
    se = 0.5 * math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / draws)
    return EstimandValue(float(0.5 * (a.mean() - b.mean())), se, "monte_carlo")


# Brute-force oracle ---------------------------------------------------------


def _neighbor_assignments(size: int):
    return itertools.product((0, 1), repeat=size)


def enumerate_estimand(
    table: ScienceTable, spec: EstimandSpec, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Reference value from the defining averages, via potential_outcome calls only.

    Every neighborhood average walks all 2^|N_-i| assignments of the open
    neighborhood and keeps the ones the definition selects. Strategy kinds
    are supported for Bernoulli strategies, whose product form lets each
    unit's expectation be enumerated over its closed neighborhood.
    """
    kind = spec.kind
    n = table.n

    def y(i, zi, zn):
        return potential_outcome(table, i, zi, zn)

    def guard(i, size):
        if 2**size > cap:
            raise EnumerationCapExceeded(i, 2**size, cap)

    if kind == "primary_avg":
        tot = 0.0
        for i in range(n):
            size = len(table.open_neighborhood(i))
            guard(i, size)
            acc = sum(y(i, 1, zn) - y(i, 0, zn) for zn in _neighbor_assignments(size))
            tot += acc / 2**size
        return tot / n
    if kind in ("primary_conditional", "fixed_primary", "fixed_primary_no_peer"):
        z = spec.z
        units = range(n) if kind == "primary_conditional" else np.flatnonzero(z == 1)
        vals = []
        for i in units:
            nb = table.open_neighborhood(i)
            zn = np.zeros(len(nb)) if kind == "fixed_primary_no_peer" else z[nb]
            vals.append(y(i, 1, zn) - y(i, 0, zn))
        return float(np.mean(vals))
    if kind in ("k_neighbors", "k_neighbors_atleast"):
        k = spec.k
        vals = []
        for i in range(n):
            size = len(table.open_neighborhood(i))
            if size < k:
                continue
            guard(i, size)
            zero = np.zeros(size)
            own = (1,) if kind.endswith("atleast") else (0, 1)
            per_own = []
            for zi in own:
                diffs = [
                    y(i, zi, zn) - y(i, zi, zero)
                    for zn in _neighbor_assignments(size)
                    if (sum(zn) >= k if kind.endswith("atleast") else sum(zn) == k)
                ]
                per_own.append(sum(diffs) / len(diffs))
            vals.append(sum(per_own) / len(per_own))
        return float(np.mean(vals))
    if kind in ("fixed_peer", "fixed_total", "total_by_hop", "network_manipulation"):
        z = spec.z
        if kind == "total_by_hop":
            units = units_at_hop(table.net, z, spec.n)
        else:
            units = np.arange(n)
        vals = []
        if kind == "network_manipulation":
            other = ScienceTable(net=spec.network, model=table.model, covariates=table.covariates,
                                 noise=table.noise)
        for i in units:
            nb = table.open_neighborhood(i)
            if kind == "fixed_peer":
                vals.append(y(i, z[i], z[nb]) - y(i, z[i], np.zeros(len(nb))))
            elif kind == "network_manipulation":
                nb2 = other.open_neighborhood(i)
                vals.append(potential_outcome(other, i, z[i], z[nb2]) - y(i, z[i], z[nb]))
            else:
                vals.append(y(i, z[i], z[nb]) - y(i, 0, np.zeros(len(nb))))
        return float(np.mean(vals))
    if kind in ("strategy_direct", "strategy_indirect"):
        strategies = [spec.strategy] + ([spec.strategy_alt] if spec.strategy_alt else [])
        if not all(isinstance(s, BernoulliStrategy) for s in strategies):
            raise ConfigurationError("exact strategy enumeration needs Bernoulli strategies")
        vals = []
        for i in range(n):
            size = len(table.open_neighborhood(i))
            guard(i, size + 1)
            acc = 0.0
            for zi in (0, 1):
                for zn in _neighbor_assignments(size):
                    t = sum(zn) + zi
                    probs = [s.p**t * (1 - s.p) ** (size + 1 - t) for s in strategies]
                    yi = y(i, zi, zn)
                    if kind == "strategy_direct":
                        acc += yi * probs[0] * (1 if zi else -1)
                    else:
                        acc += 0.5 * yi * (probs[0] - probs[1])
            vals.append(acc)
        return float(np.mean(vals))
    raise ConfigurationError(f"unhandled estimand kind {kind!r}")  # pragma: no cover


# JSON IO ---------------------------------------------------------------------


def science_to_json(table: ScienceTable, include_network: bool = True) -> dict:
    doc = {
        "n": table.n,
        "model": table.model.to_json(),
        "covariates": table.covariates.tolist(),
        "noise": table.noise.tolist(),
        "metadata": table.metadata,
    }
    if include_network:
        src, dst, cnt = table.net.edges()
        doc["edges"] = [[int(a), int(b), float(c)] for a, b, c in zip(src, dst, cnt)]
    return doc


def science_from_json(doc: Mapping, net: InfluenceNetwork | None = None) -> ScienceTable:
    n = int(doc["n"])
    if net is None:
        if "edges" not in doc:
            raise DataError("science file has no edges; pass the network explicitly")
        e = np.asarray(doc["edges"], dtype=float).reshape(-1, 3)
        net = InfluenceNetwork.from_edges(n, e[:, 0].astype(int), e[:, 1].astype(int), e[:, 2])
    cov = np.asarray(doc["covariates"], dtype=float).reshape(n, -1)
    meta = {k: v for k, v in doc.get("metadata", {}).items()
            if k not in ("log_sum_convention", "covariate_log_shifted")}
    return ScienceTable(net=net, model=OutcomeModelSpec.from_json(doc["model"]), covariates=cov,
                        noise=np.asarray(doc["noise"], dtype=float), metadata=meta)


def write_science(table: ScienceTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(science_to_json(table)) + "\n", encoding="utf-8")


def read_science(path: str | Path) -> ScienceTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read science file ({exc})") from exc
    return science_from_json(doc)


def with_model(table: ScienceTable, **changes) -> ScienceTable:
    """Same covariates and noise under a modified outcome model."""
    return ScienceTable(net=table.net, model=replace(table.model, **changes),
                        covariates=table.covariates, noise=table.noise,
                        metadata={k: v for k, v in table.metadata.items()
                                  if k == "treatment_weights"})


__all__ = [
    "OutcomeModelSpec", "ScienceTable", "EstimandSpec", "EstimandValue", "McConfig",
    "BernoulliStrategy", "FixedCountStrategy", "CallableStrategy",
    "build_science", "exposure", "exposures", "potential_outcome", "outcomes", "observe",
    "compute_estimand", "enumerate_estimand", "units_at_hop", "peer_transform",
    "covariate_transform", "log_covariates", "science_to_json", "science_from_json",
    "write_science", "read_science", "with_model",
]
