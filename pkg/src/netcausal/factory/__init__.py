"""Factorial harness: plans, execution, aggregation, ANOVA and the CLI."""

from .anova import AnovaRow, AnovaTable, all_terms, anova, composite
from .confounder import CONFOUNDER_TYPES, ConfounderRow, ConfounderStudyConfig, run_confounder_study
from .plan import (
    ESTIMAND_LEVELS,
    FACTOR_ORDER,
    SCHEME_LEVELS,
    Cell,
    FactorialPlan,
    read_plan,
    write_plan,
)
from .report import CellResult, aggregate, coverage_summary, emit_report, read_csv
from .runner import collect_rows, read_ledger, run_factorial, run_task

__all__ = [
    "AnovaRow", "AnovaTable", "all_terms", "anova", "composite",
    "CONFOUNDER_TYPES", "ConfounderRow", "ConfounderStudyConfig", "run_confounder_study",
    "ESTIMAND_LEVELS", "FACTOR_ORDER", "SCHEME_LEVELS", "Cell", "FactorialPlan",
    "read_plan", "write_plan", "CellResult", "aggregate", "coverage_summary", "emit_report",
    "read_csv", "collect_rows", "read_ledger", "run_factorial", "run_task",
]
