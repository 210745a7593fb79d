"""Factorial plans: factor levels, cell enumeration and desk-scale subsets."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from ..analysis import ESTIMATOR_LEVELS
from ..errors import ConfigurationError, DataError

SCHEME_LEVELS = ("CR", "SR", "INR", "RC", "RG", "RCG", "PT", "RNC")
ESTIMATOR_CODES = tuple(ESTIMATOR_LEVELS)
ESTIMAND_LEVELS = ("primary_avg", "k_neighbors")
FACTOR_ORDER = (
    "size", "density", "community_exponent", "block_scale", "alpha",
    "confounder", "covariate_fn", "exposure_fn", "resource", "scheme", "estimator",
)
TRUTH_FACTORS = FACTOR_ORDER[:8]
DESIGN_FACTORS = FACTOR_ORDER[:10]


@dataclass(frozen=True)
class Cell:
    size: int
    density: float
    community_exponent: float
    block_scale: float
    alpha: float
    confounder: str
    covariate_fn: str
    exposure_fn: str
    resource: float
    scheme: str
    estimator: str

    @property
    def k(self) -> int:
        return max(2, int(round(self.size**self.community_exponent)))

    @property
    def sparsity(self) -> float:
        return min(1.0, self.density * math.log(self.size) / self.size)

    @property
    def resource_cap(self) -> int:
        return max(1, int(round(self.resource * self.size)))

    def key(self, factors: tuple[str, ...] = FACTOR_ORDER) -> str:
        return "|".join(f"{f}={getattr(self, f)}" for f in factors)

    @property
    def cell_id(self) -> str:
        return self.key()

    @property
    def truth_key(self) -> str:
        return self.key(TRUTH_FACTORS)

    @property
    def design_key(self) -> str:
        return self.key(DESIGN_FACTORS)

    def levels(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FactorialPlan:
    sizes: tuple[int, ...] = (100,)
    densities: tuple[float, ...] = (3.0,)
    community_exponents: tuple[float, ...] = (0.3,)
    block_scales: tuple[float, ...] = (1.0,)
    alphas: tuple[float, ...] = (2.4,)
    confounders: tuple[str, ...] = ("none", "activity", "membership")
    covariate_fns: tuple[str, ...] = ("identity",)
    exposure_fns: tuple[str, ...] = ("sum",)
    resources: tuple[float, ...] = (0.10,)
    schemes: tuple[str, ...] = SCHEME_LEVELS
    estimators: tuple[str, ...] = ("NM", "DM", "BNS", "BIPS", "BICS", "BNL")
    estimands: tuple[str, ...] = ESTIMAND_LEVELS
    k_target: int = 1
    replications: int = 3
    base_seed: int = 0
    subset: tuple[int, ...] | None = None
    sample_count: int = 1000
    level: float = 0.9
    calibration_draws: int = 200
    grouping_draws: int = 50
    balance_percentile: float = 10.0
    group_size_ratio_max: float = 1.0
    max_rerandomizations: int = 200
    network_overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("sizes", "densities", "community_exponents", "block_scales", "alphas",
                     "confounders", "covariate_fns", "exposure_fns", "resources", "schemes",
                     "estimators", "estimands"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigurationError(f"factor {name} needs at least one level")
            object.__setattr__(self, name, value)
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        bad = [s for s in self.schemes if s not in SCHEME_LEVELS]
        if bad:
            raise ConfigurationError(f"unknown schemes {bad}")
        bad = [e for e in self.estimators if e not in ESTIMATOR_CODES]
        if bad:
            raise ConfigurationError(f"unknown estimators {bad}")
        bad = [c for c in self.confounders if c not in ("none", "activity", "membership")]
        if bad:
            raise ConfigurationError(f"factorial confounders must be none/activity/membership: {bad}")
        bad = [e for e in self.estimands if e not in ESTIMAND_LEVELS]
        if bad:
            raise ConfigurationError(f"unknown estimands {bad}")
        if any(not 0 < r <= 1 for r in self.resources):
            raise ConfigurationError("resource levels must lie in (0, 1]")
        if self.subset is not None:
            object.__setattr__(self, "subset", tuple(int(i) for i in self.subset))

    def all_cells(self) -> list[Cell]:
        grid = itertools.product(
            self.sizes, self.densities, self.community_exponents, self.block_scales, self.alphas,
            self.confounders, self.covariate_fns, self.exposure_fns, self.resources, self.schemes,
            self.estimators,
        )
        return [Cell(*levels) for levels in grid]

    def cells(self) -> list[Cell]:
        """Selected cells in canonical order."""
        cells = self.all_cells()
        if self.subset is None:
            return cells
        if any(not 0 <= i < len(cells) for i in self.subset):
            raise ConfigurationError(f"subset indices must lie in [0, {len(cells)})")
        return [cells[i] for i in sorted(set(self.subset))]

    def tasks(self) -> Iterator[tuple[Cell, int]]:
        for cell in self.cells():
            for rep in range(self.replications):
                yield cell, rep

    def to_json(self) -> dict:
        doc = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "FactorialPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown plan fields: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**kwargs)


def read_plan(path: str | Path) -> FactorialPlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read plan ({exc})") from exc
    return FactorialPlan.from_json(doc.get("plan", doc))


def write_plan(plan: FactorialPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan.to_json(), indent=1) + "\n", encoding="utf-8")


__all__ = [
    "Cell", "FactorialPlan", "SCHEME_LEVELS", "ESTIMATOR_CODES", "ESTIMAND_LEVELS",
    "FACTOR_ORDER", "read_plan", "write_plan",
]
