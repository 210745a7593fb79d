"""Balanced fixed-effects factorial ANOVA up to three-way interactions.

Each term's sum of squares comes from the inclusion-exclusion contrast of
marginal means over the full grid of factor levels. The residual takes
whatever the listed terms leave of the total, so it pools replication error
with any interactions that were not requested.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, DataError

MAX_ORDER = 3


@dataclass(frozen=True)
class AnovaRow:
    term: str
    df: int
    ss: float
    ms: float

    def as_dict(self) -> dict:
        return {"term": self.term, "df": self.df, "ss": self.ss, "ms": self.ms}


@dataclass(frozen=True)
class AnovaTable:
    rows: tuple[AnovaRow, ...]
    residual: AnovaRow
    total_ss: float
    total_df: int
    levels: Mapping[str, tuple]

    def row(self, term: str) -> AnovaRow:
        for r in self.rows:
            if r.term == term:
                return r
        raise KeyError(term)

    def df(self, term: str) -> int:
        return self.row(term).df

    def as_dicts(self) -> list[dict]:
        return [r.as_dict() for r in (*self.rows, self.residual)]


def term_name(factors: Sequence[str]) -> str:
    return " x ".join(factors)


def all_terms(factors: Sequence[str], max_order: int = MAX_ORDER) -> list[tuple[str, ...]]:
    out = []
    for order in range(1, min(max_order, len(factors)) + 1):
        out.extend(itertools.combinations(factors, order))
    return out


def _grid(rows: Sequence[Mapping], response: str, factors: Sequence[str]):
    levels = {f: tuple(dict.fromkeys(r[f] for r in rows)) for f in factors}
    index = {f: {v: i for i, v in enumerate(levels[f])} for f in factors}
    shape = tuple(len(levels[f]) for f in factors)
    buckets: dict[tuple, list[float]] = {}
    for r in rows:
        key = tuple(index[f][r[f]] for f in factors)
        buckets.setdefault(key, []).append(float(r[response]))
    missing = [c for c in itertools.product(*(range(s) for s in shape)) if c not in buckets]
    if missing:
        named = [", ".join(f"{f}={levels[f][i]}" for f, i in zip(factors, c)) for c in missing[:5]]
        more = f" and {len(missing) - 5} more" if len(missing) > 5 else ""
        raise DataError(f"unbalanced design: missing cells [{'; '.join(named)}]{more}")
    counts = {len(v) for v in buckets.values()}
    if len(counts) != 1:
        raise DataError(f"unbalanced design: replication counts per cell differ {sorted(counts)}")
    reps = counts.pop()
    y = np.empty(shape + (reps,))
    for key, vals in buckets.items():
        y[key] = vals
    return y, levels


def anova(
    results: Iterable[Mapping],
    factors: Sequence[str],
    response: str = "imse",
    terms: Sequence[Sequence[str]] | None = None,
    max_order: int = MAX_ORDER,
) -> AnovaTable:
    """Fixed-effects decomposition of ``response`` over ``factors``.

    ``terms`` defaults to every main effect and interaction up to
    ``max_order``; each term's df is the product of (levels - 1).
    """
    rows = list(results)
    factors = list(factors)
    if not rows:
        raise DataError("no results to analyse")
    if len(set(factors)) != len(factors):
        raise ConfigurationError("factors must be distinct")
    terms = [tuple(t) for t in (terms if terms is not None else all_terms(factors, max_order))]
    for t in terms:
        if len(t) > MAX_ORDER:
            raise ConfigurationError(f"interactions above order {MAX_ORDER} are not supported: {t}")
        unknown = [f for f in t if f not in factors]
        if unknown:
            raise ConfigurationError(f"term {t} uses unknown factors {unknown}")
    y, levels = _grid(rows, response, factors)
    if not np.all(np.isfinite(y)):
        raise DataError(f"response {response!r} has non-finite values")
    nf = len(factors)
    n_total = y.size
    grand = y.mean()
    total_ss = float(((y - grand) ** 2).sum())
    cell_means = y.mean(axis=-1)
    out = []
    for t in terms:
        axes = sorted(factors.index(f) for f in t)
        effect = np.zeros([cell_means.shape[a] for a in axes])
        for r in range(len(axes) + 1):
            for sub in itertools.combinations(axes, r):
                drop = tuple(a for a in range(nf) if a not in sub)
                m = cell_means.mean(axis=drop) if drop else cell_means
                # place marginal mean on the term's axes for broadcasting
                shape = [cell_means.shape[a] if a in sub else 1 for a in axes]
                effect = effect + (-1) ** (len(axes) - r) * np.reshape(m, shape)
        ss = float(n_total / effect.size * (effect**2).sum())
        df = int(np.prod([cell_means.shape[a] - 1 for a in axes]))
        out.append(AnovaRow(term_name(t), df, ss, ss / df if df > 0 else float("nan")))
    res_df = n_total - 1 - sum(r.df for r in out)
    res_ss = max(total_ss - sum(r.ss for r in out), 0.0)
    residual = AnovaRow("Residual", res_df, res_ss, res_ss / res_df if res_df > 0 else float("nan"))
    return AnovaTable(tuple(out), residual, total_ss, n_total - 1, levels)


def composite(rows: Iterable[Mapping], name: str, parts: Sequence[str]) -> list[dict]:
    """Copy ``rows`` with a new factor ``name`` joining the levels of ``parts``."""
    out = []
    for r in rows:
        d = dict(r)
        d[name] = "/".join(str(r[p]) for p in parts)
        out.append(d)
    return out


__all__ = ["AnovaRow", "AnovaTable", "anova", "all_terms", "term_name", "composite", "MAX_ORDER"]
