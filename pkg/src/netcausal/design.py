"""Treatment-assignment schemes, exposure groups, covariate balance, rerandomization.

Schemes
    CR   fixed-size complete randomization (optionally weighted, used for the
         treatment-likelihood confounder).
    SR   sequential randomization toward the cells of a k-treated-neighbors
         contrast (own treatment in {0, 1} x treated in-neighbors in {0, k}).
    INR  SR after first fixing a fraction of shared in-neighbors to control.
    PT   weighted sampling without replacement, weight out-degree + 1.
    RNC  whole spectral clusters randomized to treatment.

SR/INR bookkeeping. Each unit is free or fixed at 0/1. A unit ``i`` not yet
placed is eligible for cell ``(own, c)`` when its own value is free or already
``own`` and, with ``T`` fixed-treated and ``U`` free open in-neighbors,
``T <= c <= T + U`` and the treated budget covers the new treatments. Placing
``i`` fixes ``i`` and every open in-neighbor, so later steps can never change
the exposure of a placed unit. The next cell is the one with the fewest
placements so far (ties in cell order); the unit is drawn uniformly among the
units eligible for that cell. Free units end at control.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, EstimatorInapplicable
from .netcore import InfluenceNetwork
from .science import exposures
from .seeding import SeedLike, as_generator

SCHEMES = ("CR", "SR", "INR", "PT", "RNC")
RERANDOMIZATIONS = ("RC", "RG", "RCG")
GROUP_LABELS_3 = ("low", "mid", "high")
RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class Assignment:
    z: np.ndarray
    scheme: str
    resource_cap: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        z = np.asarray(self.z)
        if z.ndim != 1 or not np.isin(z, (0, 1)).all():
            raise ConfigurationError("assignment entries must be 0 or 1")
        if int(z.sum()) > self.resource_cap:
            raise ConfigurationError(
                f"{int(z.sum())} treated units exceed the resource cap {self.resource_cap}"
            )
        object.__setattr__(self, "z", z.astype(np.int8))

    @property
    def treated(self) -> int:
        return int(self.z.sum())


@dataclass(frozen=True)
class SchemeConfig:
    k: int = 1
    insulation: float = 0.6
    clusters: int | None = None
    cluster_labels: tuple[int, ...] | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError("target k must be >= 1")
        if not 0.0 <= self.insulation <= 1.0:
            raise ConfigurationError("insulation fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ExposureGrouping:
    """Closed exposure intervals [L_g, H_g] that tile [0, inf) in order."""

    boundaries: tuple[tuple[float, float], ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        b = tuple((float(lo), float(hi)) for lo, hi in self.boundaries)
        if not b:
            raise ConfigurationError("grouping needs at least one interval")
        if b[0][0] != 0.0 or b[-1][1] != math.inf:
            raise ConfigurationError("intervals must start at 0 and end at infinity")
        for (lo, hi), nxt in zip(b, b[1:] + ((math.inf, math.inf),)):
            if lo > hi:
                raise ConfigurationError(f"interval [{lo}, {hi}] is reversed")
            if nxt[0] != math.inf and nxt[0] != np.nextafter(hi, math.inf):
                raise ConfigurationError("intervals must be adjacent and non-overlapping")
        object.__setattr__(self, "boundaries", b)
        labels = self.labels
        if labels is None:
            labels = GROUP_LABELS_3 if len(b) == 3 else tuple(f"g{g}" for g in range(len(b)))
        if len(labels) != len(b):
            raise ConfigurationError("one label per interval is required")
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def from_cuts(cls, cuts: Sequence[float], labels: Sequence[str] | None = None) -> "ExposureGrouping":
        """Intervals [0, c1], (c1, c2], ..., (c_last, inf) from increasing upper cut points."""
        cuts = [float(c) for c in cuts]
        if any(b <= a for a, b in zip(cuts, cuts[1:])) or (cuts and cuts[0] < 0):
            raise ConfigurationError("cut points must be non-negative and increasing")
        lows = [0.0] + [float(np.nextafter(c, math.inf)) for c in cuts]
        highs = cuts + [math.inf]
        return cls(tuple(zip(lows, highs)), None if labels is None else tuple(labels))

    @property
    def size(self) -> int:
        return len(self.boundaries)

    def index(self, s: np.ndarray) -> np.ndarray:
        highs = np.array([hi for _, hi in self.boundaries])
        return np.searchsorted(highs, np.asarray(s, dtype=float), side="left")


@dataclass(frozen=True)
class BalanceCriterion:
    """Tiers of covariate columns with Mahalanobis thresholds, plus a group-size rule."""

    tiers: tuple[tuple[int, ...], ...] = ()
    thresholds: tuple[float, ...] = ()
    group_size_ratio_max: float = math.inf
    max_draws: int = 1000

    def __post_init__(self) -> None:
        object.__setattr__(self, "tiers", tuple(tuple(int(c) for c in t) for t in self.tiers))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if len(self.tiers) != len(self.thresholds):
            raise ConfigurationError("one threshold per tier is required")
        if any(t <= 0 for t in self.thresholds):
            raise ConfigurationError("balance thresholds must be > 0")
        if self.group_size_ratio_max < 0:
            raise ConfigurationError("group size ratio must be >= 0")
        if self.max_draws < 1:
            raise ConfigurationError("max_draws must be >= 1")


# Schemes ---------------------------------------------------------------------


def _check_cap(net: InfluenceNetwork, cap: int) -> int:
    cap = int(cap)
    if not 0 <= cap <= net.n:
        raise ConfigurationError(f"resource cap {cap} outside [0, {net.n}]")
    return cap


def draw_assignment(
    scheme: str,
    net: InfluenceNetwork,
    resource_cap: int,
    config: SchemeConfig | None = None,
    seed: SeedLike = None,
) -> Assignment:
    config = config or SchemeConfig()
    rng = as_generator(seed)
    cap = _check_cap(net, resource_cap)
    n = net.n
    if scheme == "CR":
        z = np.zeros(n, dtype=np.int8)
        if config.weights is not None:
            w = np.asarray(config.weights, dtype=float)
            if w.shape != (n,) or np.any(w < 0) or np.count_nonzero(w) < cap:
                raise ConfigurationError("weights must be non-negative with enough positive entries")
            z[rng.choice(n, size=cap, replace=False, p=w / w.sum())] = 1
        else:
            z[rng.choice(n, size=cap, replace=False)] = 1
        return Assignment(z, scheme, cap)
    if scheme == "PT":
        w = net.out_degree().astype(float) + 1.0
        z = np.zeros(n, dtype=np.int8)
        z[rng.choice(n, size=cap, replace=False, p=w / w.sum())] = 1
        return Assignment(z, scheme, cap)
    if scheme in ("SR", "INR"):
        return _sequential(net, cap, config, rng, insulate=scheme == "INR")
    if scheme == "RNC":
        return _cluster(net, cap, config, rng)
    raise ConfigurationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _sequential(
    net: InfluenceNetwork, cap: int, config: SchemeConfig, rng: np.random.Generator,
    insulate: bool,
) -> Assignment:
    n, k = net.n, config.k
    csc = net.matrix.tocsc()
    nbrs = [np.sort(csc.indices[csc.indptr[i] : csc.indptr[i + 1]]) for i in range(n)]
    fixed = np.full(n, -1, dtype=np.int8)
    insulated = 0
    if insulate:
        shared = np.flatnonzero(net.out_degree() >= 2)
        m = int(round(config.insulation * shared.size))
        if m:
            pick = np.sort(rng.choice(shared, size=m, replace=False))
            fixed[pick] = 0
            insulated = m
    cells = [(1, k), (0, k), (1, 0), (0, 0)]
    counts = [0, 0, 0, 0]
    placed: dict[int, tuple[int, int]] = {}
    budget = cap

    binary = (net.matrix > 0).astype(np.int64).T.tocsr()  # row i: in-neighbors of i
    is_placed = np.zeros(n, dtype=bool)

    def eligible(own: int, c: int) -> np.ndarray:
        t = binary @ (fixed == 1).astype(np.int64)
        u = binary @ (fixed == -1).astype(np.int64)
        need = np.maximum(c - t, 0) + ((fixed == -1) & (own == 1))
        return (
            ~is_placed & ((fixed == -1) | (fixed == own)) & (t <= c) & (c <= t + u)
            & (need <= budget)
        )

    while True:
        order = sorted(range(4), key=lambda c: (counts[c], c))
        chosen = None
        for ci in order:
            cand = np.flatnonzero(eligible(*cells[ci]))
            if cand.size:
                chosen = ci, int(cand[rng.integers(cand.size)])
                break
        if chosen is None:
            break
        ci, i = chosen
        own, c = cells[ci]
        nb = nbrs[i]
        free = nb[fixed[nb] == -1]
        t = int(np.count_nonzero(fixed[nb] == 1))
        treat = rng.choice(free, size=c - t, replace=False) if c - t > 0 else np.empty(0, int)
        fixed[free] = 0
        fixed[treat] = 1
        if fixed[i] == -1:
            fixed[i] = own
        budget = cap - int(np.count_nonzero(fixed == 1))
        placed[i] = (own, c)
        is_placed[i] = True
        counts[ci] += 1
    z = (fixed == 1).astype(np.int8)
    meta = {
        "placements": {str(i): list(v) for i, v in sorted(placed.items())},
        "cell_counts": {f"{o},{c}": counts[j] for j, (o, c) in enumerate(cells)},
        "insulated": insulated,
        "k": k,
    }
    if not placed:
        meta["diagnostic"] = "no eligible units; empty assignment"
    return Assignment(z, "INR" if insulate else "SR", cap, meta)


def spectral_clusters(net: InfluenceNetwork, count: int, rng: np.random.Generator) -> np.ndarray:
    from .hmmb_infer.init import spectral_labels

    return spectral_labels(net, count, rng)


def _cluster(
    net: InfluenceNetwork, cap: int, config: SchemeConfig, rng: np.random.Generator
) -> Assignment:
    n = net.n
    refined = 0
    if config.cluster_labels is not None:
        labels = np.asarray(config.cluster_labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ConfigurationError("cluster labels need one entry per unit")
    else:
        count = config.clusters or max(1, int(round(math.sqrt(n))))
        labels = spectral_clusters(net, min(count, n), rng)
        # Refine until at least one whole cluster fits the resource.
        while cap > 0 and np.bincount(labels).min() > cap and count < n:
            count = min(2 * count, n)
            labels = spectral_clusters(net, count, rng)
            refined += 1
    ids = np.unique(labels)
    sizes = {int(c): int(np.count_nonzero(labels == c)) for c in ids}
    z = np.zeros(n, dtype=np.int8)
    used = 0
    chosen = []
    for c in rng.permutation(ids):
        c = int(c)
        if used + sizes[c] <= cap:
            z[labels == c] = 1
            used += sizes[c]
            chosen.append(c)
    return Assignment(z, "RNC", cap, {"clusters": labels.tolist(), "treated_clusters": sorted(chosen),
                                      "refinements": refined})


# Exposure groups -------------------------------------------------------------


def exposure_groups(
    net: InfluenceNetwork, z: np.ndarray, grouping: ExposureGrouping
) -> np.ndarray:
    """Group index per unit: g iff L_g <= sum_j a_ji z_j <= H_g."""
    return grouping.index(exposures(net, z))


def tertile_grouping(
    net: InfluenceNetwork, resource_cap: int, seed: SeedLike = None, draws: int = 200
) -> ExposureGrouping:
    """Low/mid/high cuts from the exposure distribution under complete randomization.

    Cuts are the 1/3 and 2/3 quantiles of exposure pooled over ``draws``
    assignments. When ties collapse them (exposure 0 is often the majority),
    the upper cut is the median of exposures above the lower cut.
    """
    rng = as_generator(seed)
    pooled = np.concatenate([
        exposures(net, draw_assignment("CR", net, resource_cap, seed=rng).z) for _ in range(draws)
    ])
    c1, c2 = np.quantile(pooled, [1 / 3, 2 / 3])
    if c2 <= c1:
        above = pooled[pooled > c1]
        c2 = float(np.quantile(above, 0.5)) if above.size else c1
    if c2 <= c1:
        return ExposureGrouping.from_cuts([c1], labels=("low", "high"))
    return ExposureGrouping.from_cuts([c1, c2])


# Balance ---------------------------------------------------------------------


def mahalanobis_balance(
    covariates: np.ndarray, group_a: Sequence[int] | np.ndarray, group_b: Sequence[int] | np.ndarray,
    flags: dict | None = None,
) -> float:
    """(xbar_a - xbar_b)' S^-1 (xbar_a - xbar_b) with S the pooled sample covariance."""
    x = np.asarray(covariates, dtype=float)
    x = x.reshape(x.shape[0], -1)
    a = x[np.asarray(group_a, dtype=np.int64)]
    b = x[np.asarray(group_b, dtype=np.int64)]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise EstimatorInapplicable("balance is undefined for a group with fewer than 2 units")
    diff = a.mean(axis=0) - b.mean(axis=0)
    sa = np.atleast_2d(np.cov(a, rowvar=False))
    sb = np.atleast_2d(np.cov(b, rowvar=False))
    s = ((a.shape[0] - 1) * sa + (b.shape[0] - 1) * sb) / (a.shape[0] + b.shape[0] - 2)
    if np.linalg.matrix_rank(s) < s.shape[0]:
        s = s + RIDGE * np.eye(s.shape[0])
        if flags is not None:
            flags["ridge"] = True
    return float(diff @ np.linalg.solve(s, diff))


def tier_balance(
    covariates: np.ndarray, labels: np.ndarray, tier: Sequence[int], groups: int
) -> float:
    """Largest pairwise Mahalanobis distance across exposure groups; inf if a group is tiny."""
    x = np.asarray(covariates, dtype=float)[:, list(tier)]
    members = [np.flatnonzero(labels == g) for g in range(groups)]
    worst = 0.0
    for ga in range(groups):
        for gb in range(ga + 1, groups):
            if members[ga].size < 2 or members[gb].size < 2:
                return math.inf
            worst = max(worst, mahalanobis_balance(x, members[ga], members[gb]))
    return worst


def group_ratio(labels: np.ndarray, groups: int) -> float:
    sizes = np.bincount(labels, minlength=groups)
    if sizes.min() == 0:
        return math.inf
    return float(sizes.max() / sizes.min() - 1.0)


def _scores(
    z: np.ndarray, net: InfluenceNetwork, covariates: np.ndarray, grouping: ExposureGrouping,
    criterion: BalanceCriterion, variant: str,
) -> tuple[list[float], float]:
    labels = exposure_groups(net, z, grouping)
    tiers = [tier_balance(covariates, labels, t, grouping.size) for t in criterion.tiers] \
        if variant in ("RC", "RCG") else []
    ratio = group_ratio(labels, grouping.size) if variant in ("RG", "RCG") else 0.0
    return tiers, ratio


def balance_accepts(
    z: np.ndarray, net: InfluenceNetwork, covariates: np.ndarray, grouping: ExposureGrouping,
    criterion: BalanceCriterion, variant: str,
) -> bool:
    """The rerandomization acceptance predicate (tiers checked in priority order)."""
    tiers, ratio = _scores(z, net, covariates, grouping, criterion, variant)
    for m, th in zip(tiers, criterion.thresholds):
        if not m <= th:
            return False
    return ratio <= criterion.group_size_ratio_max


def calibrate_thresholds(
    net: InfluenceNetwork,
    covariates: np.ndarray,
    tiers: Sequence[Sequence[int]],
    grouping: ExposureGrouping,
    resource_cap: int,
    seed: SeedLike = None,
    draws: int = 1000,
    percentile: float = 10.0,
    base_scheme: str = "CR",
    group_size_ratio_max: float = math.inf,
    max_draws: int = 1000,
) -> BalanceCriterion:
    """Per-tier thresholds at the given percentile of the statistic under the base scheme."""
    rng = as_generator(seed)
    stats = np.empty((draws, len(tiers)))
    for d in range(draws):
        z = draw_assignment(base_scheme, net, resource_cap, seed=rng).z
        labels = exposure_groups(net, z, grouping)
        stats[d] = [tier_balance(covariates, labels, t, grouping.size) for t in tiers]
    thresholds = []
    for col in stats.T:
        finite = col[np.isfinite(col)]
        if finite.size == 0:
            raise DataError("no base draw produced groups large enough to measure balance")
        thresholds.append(max(float(np.percentile(finite, percentile)), 1e-12))
    return BalanceCriterion(tuple(tuple(t) for t in tiers), tuple(thresholds),
                            group_size_ratio_max, max_draws)


def rerandomize(
    base_scheme: str,
    criterion: BalanceCriterion,
    variant: str,
    net: InfluenceNetwork,
    covariates: np.ndarray,
    grouping: ExposureGrouping,
    resource_cap: int,
    seed: SeedLike = None,
    config: SchemeConfig | None = None,
) -> Assignment:
    """Draw from the base scheme until the balance rule holds.

    After ``max_draws`` failures the draw with the smallest worst-case
    violation ratio is returned with ``relaxed`` set.
    """
    if variant not in RERANDOMIZATIONS:
        raise ConfigurationError(f"unknown rerandomization {variant!r}")
    rng = as_generator(seed)
    x = np.asarray(covariates, dtype=float).reshape(net.n, -1)
    best, best_score = None, math.inf
    for attempt in range(1, criterion.max_draws + 1):
        a = draw_assignment(base_scheme, net, resource_cap, config, rng)
        tiers, ratio = _scores(a.z, net, x, grouping, criterion, variant)
        ok = all(m <= th for m, th in zip(tiers, criterion.thresholds)) and \
            ratio <= criterion.group_size_ratio_max
        meta = {"attempts": attempt, "tier_balance": tiers, "group_ratio": ratio, "relaxed": False}
        if ok:
            return Assignment(a.z, variant, a.resource_cap, {**a.metadata, **meta})
        parts = [m / th for m, th in zip(tiers, criterion.thresholds)]
        if variant in ("RG", "RCG"):
            parts.append((1.0 + ratio) / (1.0 + criterion.group_size_ratio_max))
        score = max(parts) if parts else 0.0
        if best is None or score < best_score:
            best, best_score = (a, meta), score
    a, meta = best
    meta = {**meta, "attempts": criterion.max_draws, "relaxed": True}
    return Assignment(a.z, variant, a.resource_cap, {**a.metadata, **meta})


def standardized_mean_difference(
    covariates: np.ndarray, labels: np.ndarray, high: int, low: int
) -> np.ndarray:
    """Per-covariate (mean_high - mean_low) / sd over all units; nan if a group is empty."""
    x = np.asarray(covariates, dtype=float).reshape(labels.size, -1)
    h, l = labels == high, labels == low
    if not h.any() or not l.any():
        return np.full(x.shape[1], np.nan)
    sd = x.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (x[h].mean(axis=0) - x[l].mean(axis=0)) / sd


# Export ----------------------------------------------------------------------


def write_assignment_csv(
    path: str | Path, assignment: Assignment, labels: np.ndarray | None = None,
    grouping: ExposureGrouping | None = None,
) -> None:
    """CSV with columns unit,z,group_label."""
    n = assignment.z.size
    names = grouping.labels if grouping is not None else None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "z", "group_label"])
        for i in range(n):
            g = "" if labels is None else (names[labels[i]] if names else str(int(labels[i])))
            w.writerow([i, int(assignment.z[i]), g])


def read_assignment_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not rows or set(rows[0]) != {"unit", "z", "group_label"}:
        raise DataError(f"{path}: expected columns unit,z,group_label")
    try:
        units = np.array([int(r["unit"]) for r in rows])
        z = np.array([int(r["z"]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not np.array_equal(np.sort(units), np.arange(units.size)) or not np.isin(z, (0, 1)).all():
        raise DataError(f"{path}: units must be 0..n-1 with binary z")
    out = np.empty(units.size, dtype=np.int8)
    out[units] = z
    labels = [""] * units.size
    for u, r in zip(units, rows):
        labels[u] = r["group_label"]
    return out, labels


__all__ = [
    "Assignment", "SchemeConfig", "ExposureGrouping", "BalanceCriterion",
    "draw_assignment", "exposure_groups", "tertile_grouping", "mahalanobis_balance",
    "tier_balance", "group_ratio", "balance_accepts", "calibrate_thresholds", "rerandomize",
    "standardized_mean_difference", "spectral_clusters", "write_assignment_csv",
    "read_assignment_csv",
]
