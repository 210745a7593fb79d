"""Factorial execution with derived seeds and a resumable on-disk ledger.

One task is a (cell, replication) pair. Streams are derived from the base
seed and the parts of the cell id each stage depends on:

    network + science    (base, "truth", truth factors, rep)
    exposure groups and
    balance thresholds   (base, "calibrate", truth factors, resource, rep)
    assignment           (base, "design", design factors, rep)
    estimation           (base, "estimate", cell id, rep)

so cells that share a truth setting see the same network in a given
replication, and the result of a task never depends on execution order.

The ledger is a JSON-lines file appended by a single writer after every
task; a rerun skips tasks already recorded, and a torn final line is ignored.
"""

from __future__ import annotations

import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..analysis import estimate as run_estimator
from ..design import (
    SchemeConfig,
    calibrate_thresholds,
    draw_assignment,
    rerandomize,
    tertile_grouping,
)
from ..errors import NetcausalError
from ..netcore import (
    BASELINE_LAMBDA_MIN,
    STUDY_TIMESPAN,
    GeneratorConfig,
    baseline_block,
    baseline_pseudocounts,
    sample_hmmb_params,
    sample_network,
)
from ..science import EstimandSpec, OutcomeModelSpec, build_science, compute_estimand, observe
from ..seeding import derive_rng
from .plan import Cell, FactorialPlan

LEDGER_NAME = "ledger.jsonl"
ROW_FIELDS = (
    "cell_index", "cell_id", "replication", "estimand", "status", "truth", "estimate",
    "imse", "lower", "upper", "width", "covered", "treated", "message",
)


@dataclass
class _Truth:
    params: object
    net: object
    table: object
    truths: dict


class _Cache:
    """Small per-process memo for truth settings and calibrations."""

    def __init__(self, limit: int = 8):
        self.limit = limit
        self.data: dict = {}

    def get(self, key, build):
        if key not in self.data:
            if len(self.data) >= self.limit:
                self.data.pop(next(iter(self.data)))
            self.data[key] = build()
        return self.data[key]


_CACHE = _Cache()


def generator_config(cell: Cell, plan: FactorialPlan) -> GeneratorConfig:
    k = cell.k
    settings = dict(
        n=cell.size, block=baseline_block(k, cell.block_scale),
        pseudocounts=baseline_pseudocounts(k),
        sparsity=cell.sparsity, alpha=cell.alpha, timespan=STUDY_TIMESPAN,
        lambda_min=BASELINE_LAMBDA_MIN,
    )
    settings.update(plan.network_overrides)
    return GeneratorConfig(**settings)


def estimand_specs(plan: FactorialPlan) -> list[EstimandSpec]:
    return [EstimandSpec(e, k=plan.k_target if e == "k_neighbors" else None)
            for e in plan.estimands]


def _build_truth(cell: Cell, plan: FactorialPlan, rep: int) -> _Truth:
    rng = derive_rng(plan.base_seed, "truth", cell.truth_key, rep)
    params = sample_hmmb_params(generator_config(cell, plan), rng)
    net = sample_network(params, rng)
    model = OutcomeModelSpec.factorial(cell.confounder, cell.covariate_fn, cell.exposure_fn, params.k)
    table = build_science(net, model, params, rng)
    truths = {}
    for spec in estimand_specs(plan):
        try:
            truths[spec.label()] = float(compute_estimand(table, spec))
        except NetcausalError as exc:
            truths[spec.label()] = exc
    return _Truth(params, net, table, truths)


def balance_covariates(params) -> tuple[np.ndarray, tuple[tuple[int, ...], ...]]:
    """Activity level as tier 1, K-1 membership columns as tier 2."""
    k = params.k
    x = np.column_stack([params.lam, params.pi[:, : max(k - 1, 1)]])
    tiers = ((0,), tuple(range(1, x.shape[1])))
    return x, tiers


def _build_calibration(cell: Cell, plan: FactorialPlan, rep: int, truth: _Truth):
    rng = derive_rng(plan.base_seed, "calibrate", cell.truth_key, repr(cell.resource), rep)
    grouping = tertile_grouping(truth.net, cell.resource_cap, rng, plan.grouping_draws)
    x, tiers = balance_covariates(truth.params)
    criterion = calibrate_thresholds(
        truth.net, x, tiers, grouping, cell.resource_cap, rng, plan.calibration_draws,
        plan.balance_percentile, group_size_ratio_max=plan.group_size_ratio_max,
        max_draws=plan.max_rerandomizations,
    )
    return grouping, criterion, x


def _plan_key(plan: FactorialPlan) -> str:
    """Plan settings that shape cached truths and calibrations."""
    doc = plan.to_json()
    for name in ("subset", "replications", "schemes", "estimators", "resources"):
        doc.pop(name)
    return json.dumps(doc, sort_keys=True)


def run_task(plan: FactorialPlan, cell_index: int, cell: Cell, rep: int) -> dict:
    """One replication of one cell; failures become diagnostic rows."""
    start = time.perf_counter()
    rows = []
    try:
        pk = _plan_key(plan)
        truth = _CACHE.get(("truth", pk, cell.truth_key, rep),
                           lambda: _build_truth(cell, plan, rep))
        cap = cell.resource_cap
        rng = derive_rng(plan.base_seed, "design", cell.design_key, rep)
        if cell.scheme in ("RC", "RG", "RCG"):
            grouping, criterion, x = _CACHE.get(
                ("calib", pk, cell.truth_key, cell.resource, rep),
                lambda: _build_calibration(cell, plan, rep, truth),
            )
            assignment = rerandomize("CR", criterion, cell.scheme, truth.net, x, grouping, cap, rng)
        else:
            config = SchemeConfig(k=plan.k_target, clusters=truth.params.k)
            assignment = draw_assignment(cell.scheme, truth.net, cap, config, rng)
        z = assignment.z
        y = observe(truth.table, z)
        covs = {"activity": truth.params.lam, "membership": truth.params.pi}
        est_rng = derive_rng(plan.base_seed, "estimate", cell.cell_id, rep)
        specs = estimand_specs(plan)
        try:
            estimates = run_estimator(cell.estimator, y, z, truth.net, specs, covs,
                                      plan.sample_count, est_rng, plan.level)
            failure = None
        except NetcausalError as exc:
            estimates, failure = None, exc
        for i, spec in enumerate(specs):
            label = spec.label()
            t = truth.truths[label]
            base = {"estimand": label, "treated": assignment.treated}
            if isinstance(t, Exception) or failure is not None:
                err = t if isinstance(t, Exception) else failure
                rows.append({**base, "status": "error", "message": f"{type(err).__name__}: {err}"})
                continue
            e = estimates[i]
            imse = (float(np.mean((e.samples - t) ** 2)) if e.samples is not None
                    else float((e.value - t) ** 2))
            lo, hi = e.interval if e.interval is not None else (math.nan, math.nan)
            rows.append({
                **base, "status": "ok", "truth": t, "estimate": e.point, "imse": imse,
                "lower": lo, "upper": hi, "width": hi - lo,
                "covered": None if e.interval is None else int(lo <= t <= hi),
                "message": ";".join(sorted(e.flags.get("fallback_cells", []))),
            })
    except Exception as exc:  # noqa: BLE001 - recorded as a diagnostic row
        msg = f"{type(exc).__name__}: {exc}"
        if not isinstance(exc, NetcausalError):
            msg += " | " + traceback.format_exc(limit=2).replace("\n", " ")
        rows = [{"estimand": s.label(), "status": "error", "message": msg}
                for s in estimand_specs(plan)]
    full = []
    for r in rows:
        row = {f: None for f in ROW_FIELDS}
        row.update(r)
        row.update(cell_index=cell_index, cell_id=cell.cell_id, replication=rep, **cell.levels())
        full.append(row)
    return {"task": task_key(cell, rep), "rows": full, "runtime": time.perf_counter() - start}


def task_key(cell: Cell, rep: int) -> str:
    return f"{cell.cell_id}#{rep}"


def read_ledger(path: str | Path) -> dict[str, dict]:
    records: dict[str, dict] = {}
    p = Path(path)
    if not p.exists():
        return records
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue  # torn write from an interrupted run
            records[rec["task"]] = rec
    return records


def _worker(args):
    plan_doc, index, cell_doc, rep = args
    plan = FactorialPlan.from_json(plan_doc)
    return run_task(plan, index, Cell(**cell_doc), rep)


def run_factorial(
    plan: FactorialPlan,
    out_dir: str | Path,
    threads: int = 1,
    max_tasks: int | None = None,
    progress=None,
) -> list[dict]:
    """Run (or resume) every task of ``plan``; returns all rows in canonical order.

    ``max_tasks`` stops after that many new tasks, which is how an interrupted
    run is simulated in tests.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger_path = out / LEDGER_NAME
    done = read_ledger(ledger_path)
    cells = plan.cells()
    index_of = {c.cell_id: i for i, c in enumerate(plan.all_cells())}
    pending = [(index_of[c.cell_id], c, r) for c in cells for r in range(plan.replications)
               if task_key(c, r) not in done]
    if max_tasks is not None:
        pending = pending[:max_tasks]
    with open(ledger_path, "a", encoding="utf-8") as fh:
        def record(rec):
            fh.write(json.dumps(rec, allow_nan=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            done[rec["task"]] = rec
            if progress is not None:
                progress(rec)

        if threads > 1 and len(pending) > 1:
            doc = plan.to_json()
            args = [(doc, i, c.levels(), r) for i, c, r in pending]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for rec in pool.map(_worker, args):
                    record(rec)
        else:
            for i, c, r in pending:
                record(run_task(plan, i, c, r))
    return collect_rows(plan, done)


def collect_rows(plan: FactorialPlan, done: dict[str, dict]) -> list[dict]:
    rows = []
    for c in plan.cells():
        for r in range(plan.replications):
            rec = done.get(task_key(c, r))
            if rec is not None:
                rows.extend(rec["rows"])
    return rows


def is_complete(plan: FactorialPlan, rows: Iterable[dict]) -> bool:
    have = {(r["cell_id"], r["replication"]) for r in rows}
    return all((c.cell_id, rep) in have for c, rep in plan.tasks())


__all__ = [
    "run_factorial", "run_task", "read_ledger", "collect_rows", "generator_config",
    "estimand_specs", "balance_covariates", "ROW_FIELDS", "LEDGER_NAME", "is_complete",
]
