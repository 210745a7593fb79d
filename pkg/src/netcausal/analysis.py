"""Estimators of causal estimands from observed outcomes, and their scoring.

NM    difference of treated and control means, ignoring interference.
DM    difference of cell means, cells given by own treatment and the count
      of treated in-neighbors; empty cells borrow the m nearest units.
B*    Bayesian imputation with a conjugate Normal-Inverse-Gamma linear model
      on [z, g(A, z), h(covariates), 1].

In the linear outcome model every estimand of the science module is a
difference of potential outcomes in which covariates, baseline and noise
cancel, so it equals ``tau * a + gamma * b`` for constants ``(a, b)`` fixed
by the network, the estimand and the assumed exposure form. Posterior draws
of ``(tau, gamma)`` map to estimand draws through those constants; the
constants come from the science module's own estimand routines evaluated on
unit coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, EstimatorInapplicable
from .netcore import InfluenceNetwork
from .science import (
    EstimandSpec,
    McConfig,
    OutcomeModelSpec,
    ScienceTable,
    compute_estimand,
    covariate_transform,
    peer_transform,
    exposures,
)
from .seeding import SeedLike, as_generator

COVARIATE_SETS = ("none", "activity", "membership", "all", "treatment_likelihood", "independent")
MIN_SAMPLES = 100
LINEAR_KINDS = (
    "primary_avg", "primary_conditional", "k_neighbors", "k_neighbors_atleast", "fixed_primary",
    "fixed_primary_no_peer", "fixed_peer", "fixed_total", "total_by_hop", "network_manipulation",
)


@dataclass(frozen=True)
class NigPrior:
    """beta | sigma^2 ~ Normal(mean, sigma^2 * scale * I); sigma^2 ~ InvGamma(shape, rate)."""

    mean: float = 0.0
    scale: float = 1e6
    shape: float = 0.01
    rate: float = 0.01

    def __post_init__(self) -> None:
        if self.scale <= 0 or self.shape <= 0 or self.rate <= 0:
            raise ConfigurationError("prior scale, shape and rate must be > 0")


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    covariates: str = "none"
    exposure_fn: str = "sum"
    covariate_fn: str = "identity"
    prior: NigPrior = field(default_factory=NigPrior)
    nearest: int = 5
    intercept: bool = True
    known_variance: float | None = None

    def __post_init__(self) -> None:
        if self.known_variance is not None and self.known_variance <= 0:
            raise ConfigurationError("known noise variance must be > 0")
        if self.kind not in ("neyman", "diff_means", "bayes"):
            raise ConfigurationError(f"unknown estimator kind {self.kind!r}")
        if self.covariates not in COVARIATE_SETS:
            raise ConfigurationError(f"covariate set must be one of {COVARIATE_SETS}")
        if self.exposure_fn not in ("sum", "log_sum"):
            raise ConfigurationError("exposure_fn must be sum or log_sum")
        if self.covariate_fn not in ("identity", "log"):
            raise ConfigurationError("covariate_fn must be identity or log")
        if self.nearest < 1:
            raise ConfigurationError("nearest-neighbor fallback needs m >= 1")


def _bayes_level(cov: str, fn: str, exp: str) -> EstimatorSpec:
    return EstimatorSpec("bayes", covariates=cov, covariate_fn=fn, exposure_fn=exp)


ESTIMATOR_LEVELS: dict[str, EstimatorSpec] = {
    "NM": EstimatorSpec("neyman"),
    "DM": EstimatorSpec("diff_means"),
    "BNS": _bayes_level("none", "identity", "sum"),
    "BIPS": _bayes_level("activity", "identity", "sum"),
    "BLPS": _bayes_level("activity", "log", "sum"),
    "BICS": _bayes_level("membership", "identity", "sum"),
    "BLCS": _bayes_level("membership", "log", "sum"),
    "BNL": _bayes_level("none", "identity", "log_sum"),
    "BIPL": _bayes_level("activity", "identity", "log_sum"),
    "BLPL": _bayes_level("activity", "log", "log_sum"),
    "BICL": _bayes_level("membership", "identity", "log_sum"),
    "BLCL": _bayes_level("membership", "log", "log_sum"),
}


@dataclass(frozen=True, eq=False)
class EstimandEstimate:
    target: str
    value: float | None = None
    samples: np.ndarray | None = None
    level: float = 0.9
    interval: tuple[float, float] | None = None
    truth: float | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.value is None and self.samples is None:
            raise ConfigurationError("an estimate needs a point value or posterior samples")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float).ravel()
            object.__setattr__(self, "samples", s)
            if self.interval is None:
                object.__setattr__(self, "interval", posterior_interval(s, self.level))
        if self.interval is not None:
            lo, hi = (float(v) for v in self.interval)
            if lo > hi:
                raise ConfigurationError("interval endpoints out of order")
            object.__setattr__(self, "interval", (lo, hi))

    @property
    def point(self) -> float:
        return float(self.value) if self.value is not None else float(np.mean(self.samples))

    @property
    def sample_count(self) -> int:
        return 0 if self.samples is None else int(self.samples.size)

    def covers(self, truth: float) -> bool | None:
        if self.interval is None:
            return None
        return self.interval[0] <= truth <= self.interval[1]

    def with_truth(self, truth: float) -> "EstimandEstimate":
        return EstimandEstimate(self.target, self.value, self.samples, self.level, self.interval,
                                float(truth), dict(self.flags))

    def to_json(self) -> dict:
        doc: dict = {"estimand": self.target, "point": self.point, "flags": self.flags}
        if self.samples is not None:
            doc["samples"] = {
                "count": self.sample_count, "mean": float(self.samples.mean()),
                "sd": float(self.samples.std(ddof=1)) if self.sample_count > 1 else 0.0,
            }
        doc["interval"] = None if self.interval is None else {
            "level": self.level, "lower": self.interval[0], "upper": self.interval[1]
        }
        doc["truth"] = self.truth
        doc["imse"] = None if self.truth is None else integrated_mse(self, self.truth)
        return doc


def write_estimates(estimates: Sequence[EstimandEstimate], path: str | Path) -> None:
    Path(path).write_text(json.dumps([e.to_json() for e in estimates], indent=1) + "\n",
                          encoding="utf-8")


# Scoring ----------------------------------------------------------------------


def posterior_interval(samples: np.ndarray, level: float = 0.9) -> tuple[float, float]:
    """Central interval from linearly interpolated order statistics."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < MIN_SAMPLES:
        raise ConfigurationError(f"need at least {MIN_SAMPLES} samples, got {s.size}")
    if not 0.0 < level < 1.0:
        raise ConfigurationError("level must lie in (0, 1)")
    lo, hi = np.quantile(s, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


def integrated_mse(estimate: EstimandEstimate, truth: float) -> float:
    """Squared error for a point; posterior mean of squared error for samples."""
    if estimate.samples is not None:
        return float(np.mean((estimate.samples - truth) ** 2))
    return float((estimate.value - truth) ** 2)


# Point estimators -------------------------------------------------------------


def neyman(y_obs: np.ndarray, z: np.ndarray) -> float:
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    t, c = y[z == 1], y[z == 0]
    if t.size == 0 or c.size == 0:
        raise EstimatorInapplicable("Neyman estimator needs treated and control units")
    return float(t.mean() - c.mean())


def treated_neighbor_counts(net: InfluenceNetwork, z: np.ndarray) -> np.ndarray:
    """Number of treated open in-neighbors per unit."""
    binary = (net.matrix > 0).astype(np.int64)
    return np.asarray(binary.T @ np.asarray(z, dtype=np.int64)).ravel()


def _cell_mean(
    y: np.ndarray, z: np.ndarray, count: np.ndarray, own: int, c: int, m: int, flags: dict,
    name: str,
) -> float:
    same = np.flatnonzero(z == own)
    if same.size == 0:
        raise EstimatorInapplicable(f"no observed unit with own treatment {own}")
    exact = same[count[same] == c]
    if exact.size:
        return float(y[exact].mean())
    dist = np.abs(count[same] - c)
    order = np.lexsort((same, dist))  # nearest exposure, then unit index
    pick = same[order[:m]]
    flags.setdefault("fallback_cells", []).append(name)
    return float(y[pick].mean())


def diff_means(
    y_obs: np.ndarray,
    z: np.ndarray,
    net: InfluenceNetwork,
    target: EstimandSpec,
    grouping: str = "count",
    nearest: int = 5,
) -> EstimandEstimate:
    """Cell-mean contrast for the primary (own treatment) or k-neighbor (peer) estimand.

    ``grouping="count"`` keys cells by the number of treated in-neighbors;
    ``grouping="ignore"`` puts every unit in one exposure cell, which makes the
    primary contrast the Neyman estimate and any peer contrast zero.
    """
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    flags: dict = {}
    if grouping not in ("count", "ignore"):
        raise ConfigurationError("grouping must be 'count' or 'ignore'")
    peer = target.kind in ("k_neighbors", "k_neighbors_atleast", "fixed_peer")
    if grouping == "ignore":
        if peer:
            flags["degenerate"] = "identical exposure groups"
            return EstimandEstimate(target.label(), 0.0, flags=flags)
        return EstimandEstimate(target.label(), neyman(y, z), flags=flags)
    count = treated_neighbor_counts(net, z)
    if target.kind in ("primary_avg", "primary_conditional", "fixed_primary",
                       "fixed_primary_no_peer"):
        v = (_cell_mean(y, z, count, 1, 0, nearest, flags, "1,0")
             - _cell_mean(y, z, count, 0, 0, nearest, flags, "0,0"))
        return EstimandEstimate(target.label(), v, flags=flags)
    if target.kind == "k_neighbors":
        k = int(target.k)
        parts = [
            _cell_mean(y, z, count, own, k, nearest, flags, f"{own},{k}")
            - _cell_mean(y, z, count, own, 0, nearest, flags, f"{own},0")
            for own in (0, 1)
        ]
        return EstimandEstimate(target.label(), float(np.mean(parts)), flags=flags)
    raise EstimatorInapplicable(f"difference in means has no contrast for {target.kind}")


# Bayesian imputation ------------------------------------------------------------


def covariate_columns(
    covariates: Mapping[str, np.ndarray] | None, selection: str, n: int
) -> tuple[np.ndarray, list[str]]:
    """Raw covariate columns for a covariate set; membership drops its last column."""
    covariates = covariates or {}
    names = {"all": ["activity", "membership"]}.get(selection, [] if selection == "none" else [selection])
    cols, labels = [], []
    for name in names:
        if name not in covariates:
            raise EstimatorInapplicable(f"covariate {name!r} is not available")
        x = np.asarray(covariates[name], dtype=float).reshape(n, -1)
        if name == "membership" and x.shape[1] > 1:
            x = x[:, :-1]
        cols.append(x)
        labels.extend(f"{name}{j}" if x.shape[1] > 1 else name for j in range(x.shape[1]))
    if not cols:
        return np.zeros((n, 0)), []
    return np.hstack(cols), labels


def design_matrix(
    z: np.ndarray, net: InfluenceNetwork, covariates: Mapping[str, np.ndarray] | None,
    spec: EstimatorSpec, flags: dict | None = None,
) -> tuple[np.ndarray, list[str]]:
    n = net.n
    zf = np.asarray(z, dtype=float)
    g = np.asarray(peer_transform(exposures(net, zf), spec.exposure_fn), dtype=float)
    raw, labels = covariate_columns(covariates, spec.covariates, n)
    h, shifted = covariate_transform(raw, spec.covariate_fn)
    if shifted and flags is not None:
        flags["covariate_log_shifted"] = True
    cols = [zf, g, h] + ([np.ones(n)] if spec.intercept else [])
    names = ["tau", "gamma", *labels] + (["mu"] if spec.intercept else [])
    return np.column_stack(cols), names


@dataclass(frozen=True, eq=False)
class NigPosterior:
    mean: np.ndarray
    cov_unit: np.ndarray  # posterior coefficient covariance divided by sigma^2
    shape: float
    rate: float
    names: list[str]

    known_variance: float | None = None

    def draw(self, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.known_variance is not None:
            sigma2 = np.full(count, self.known_variance)
        else:
            sigma2 = self.rate / rng.gamma(self.shape, 1.0, size=count)
        chol = np.linalg.cholesky(self.cov_unit + 1e-300 * np.eye(self.mean.size))
        eps = rng.standard_normal((count, self.mean.size))
        beta = self.mean + (eps @ chol.T) * np.sqrt(sigma2)[:, None]
        return beta, sigma2


def nig_posterior(
    x: np.ndarray, y: np.ndarray, prior: NigPrior, names: list[str] | None = None,
    flags: dict | None = None, known_variance: float | None = None,
) -> NigPosterior:
    """Closed-form conjugate update for y = X beta + e, e ~ Normal(0, sigma^2).

    With ``known_variance`` sigma^2 is held fixed and only beta is random.
    """
    n, p = x.shape
    if np.linalg.matrix_rank(x) < p and flags is not None:
        flags["rank_deficient"] = True
    prec0 = np.eye(p) / prior.scale
    m0 = np.full(p, prior.mean)
    prec = prec0 + x.T @ x
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prec0 @ m0 + x.T @ y)
    resid = y - x @ mean
    dev = mean - m0
    rate = prior.rate + 0.5 * (resid @ resid + dev @ prec0 @ dev)
    return NigPosterior(mean, cov, prior.shape + 0.5 * n, float(rate), names or [], known_variance)


def linear_weights(
    net: InfluenceNetwork, target: EstimandSpec, exposure_fn: str,
    cap: int | None = None,
) -> tuple[float, float]:
    """(a, b) with estimand = tau * a + gamma * b under the given exposure form."""
    if target.kind not in LINEAR_KINDS:
        raise EstimatorInapplicable(f"{target.kind} is not a difference of potential outcomes")
    mc = McConfig() if cap is None else McConfig(enumeration_cap=cap)
    out = []
    for tau, gamma in ((1.0, 0.0), (0.0, 1.0)):
        model = OutcomeModelSpec(tau=tau, gamma=gamma, betas=0.0, mu=0.0, noise_sd=0.0,
                                 exposure_fn=exposure_fn)
        table = ScienceTable(net=net, model=model, covariates=np.zeros((net.n, 0)),
                             noise=np.zeros(net.n))
        out.append(float(compute_estimand(table, target, mc)))
    return out[0], out[1]


def bayes_impute(
    y_obs: np.ndarray,
    z: np.ndarray,
    net: InfluenceNetwork,
    covariates: Mapping[str, np.ndarray] | None,
    spec: EstimatorSpec,
    targets: Sequence[EstimandSpec],
    sample_count: int = 4000,
    seed: SeedLike = None,
    level: float = 0.9,
) -> list[EstimandEstimate]:
    """Posterior draws of each target under the estimator's linear outcome model.

    Uses only the observed outcomes, the realized assignment, the network and
    the covariates; how the assignment was drawn never enters.
    """
    if spec.kind != "bayes":
        raise ConfigurationError("bayes_impute needs a bayes estimator spec")
    if sample_count < MIN_SAMPLES:
        raise ConfigurationError(f"sample_count must be >= {MIN_SAMPLES}")
    rng = as_generator(seed)
    flags: dict = {}
    y = np.asarray(y_obs, dtype=float)
    x, names = design_matrix(z, net, covariates, spec, flags)
    post = nig_posterior(x, y, spec.prior, names, flags, spec.known_variance)
    beta, _ = post.draw(sample_count, rng)
    tau, gamma = beta[:, 0], beta[:, 1]
    out = []
    for t in targets:
        a, b = linear_weights(net, t, spec.exposure_fn)
        out.append(EstimandEstimate(t.label(), samples=tau * a + gamma * b, level=level,
                                    flags=dict(flags, coefficients=names)))
    return out


def estimate(
    level_or_spec: str | EstimatorSpec,
    y_obs: np.ndarray,
    z: np.ndarray,
    net: InfluenceNetwork,
    targets: Sequence[EstimandSpec],
    covariates: Mapping[str, np.ndarray] | None = None,
    sample_count: int = 4000,
    seed: SeedLike = None,
    level: float = 0.9,
) -> list[EstimandEstimate]:
    """Run one estimator level (NM, DM, BNS, ...) on every target."""
    spec = ESTIMATOR_LEVELS[level_or_spec] if isinstance(level_or_spec, str) else level_or_spec
    if spec.kind == "bayes":
        return bayes_impute(y_obs, z, net, covariates, spec, targets, sample_count, seed, level)
    out = []
    for t in targets:
        if spec.kind == "neyman":
            v = 0.0 if t.kind in ("k_neighbors", "k_neighbors_atleast", "fixed_peer") \
                else neyman(y_obs, z)
            out.append(EstimandEstimate(t.label(), v, level=level))
        else:
            out.append(diff_means(y_obs, z, net, t, nearest=spec.nearest))
    return out


def estimator_code(spec: EstimatorSpec) -> str | None:
    for code, s in ESTIMATOR_LEVELS.items():
        if s == spec:
            return code
    return None


__all__ = [
    "NigPrior", "EstimatorSpec", "EstimandEstimate", "NigPosterior", "ESTIMATOR_LEVELS",
    "neyman", "diff_means", "bayes_impute", "estimate", "posterior_interval",
    "integrated_mse", "nig_posterior", "design_matrix", "covariate_columns",
    "linear_weights", "treated_neighbor_counts", "write_estimates", "estimator_code",
]
