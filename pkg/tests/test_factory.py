from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest

from conftest import tiny_plan
from netcausal.errors import ConfigurationError, DataError
from netcausal.factory import (
    FACTOR_ORDER,
    Cell,
    ConfounderStudyConfig,
    FactorialPlan,
    aggregate,
    all_terms,
    composite,
    coverage_summary,
    emit_report,
    read_csv,
    read_ledger,
    read_plan,
    run_confounder_study,
    run_factorial,
    run_task,
    write_plan,
)
from netcausal.factory.anova import anova
from netcausal.factory.cli import ANOVA_FACTORS, anova_rows, main
from netcausal.factory.report import CELL_COLUMNS, REPLICATION_COLUMNS
from netcausal.factory.runner import LEDGER_NAME, balance_covariates, generator_config, is_complete

# Plans -------------------------------------------------------------------------


def test_plan_enumerates_cells_in_factor_order():
    plan = FactorialPlan(sizes=(10, 20), schemes=("CR", "PT"), estimators=("NM",),
                         confounders=("none",))
    cells = plan.cells()
    assert len(cells) == 4
    assert [(c.size, c.scheme) for c in cells] == [(10, "CR"), (10, "PT"), (20, "CR"), (20, "PT")]
    assert list(cells[0].levels()) == list(FACTOR_ORDER)
    assert cells[0].cell_id.startswith("size=10|density=3.0")


def test_plan_subset_and_validation():
    plan = FactorialPlan(schemes=("CR", "PT"), estimators=("NM",), subset=(1, 3))
    assert [c.cell_id for c in plan.cells()] == [plan.all_cells()[i].cell_id for i in (1, 3)]
    with pytest.raises(ConfigurationError):
        FactorialPlan(subset=(999,)).cells()
    with pytest.raises(ConfigurationError):
        FactorialPlan(schemes=("XX",))
    with pytest.raises(ConfigurationError):
        FactorialPlan(confounders=("treatment_likelihood",))
    with pytest.raises(ConfigurationError):
        FactorialPlan(resources=(0.0,))
    with pytest.raises(ConfigurationError):
        FactorialPlan(sizes=())
    with pytest.raises(ConfigurationError):
        FactorialPlan.from_json({"bogus": 1})


def test_plan_json_round_trip(tmp_path):
    plan = tiny_plan(subset=(0, 5))
    write_plan(plan, tmp_path / "p.json")
    assert read_plan(tmp_path / "p.json") == plan
    with pytest.raises(DataError):
        read_plan(tmp_path / "missing.json")


def test_cell_derived_quantities():
    c = Cell(100, 3.0, 0.3, 1.0, 2.4, "none", "identity", "sum", 0.1, "CR", "NM")
    assert c.k == 4  # round(100 ** 0.3)
    assert c.sparsity == pytest.approx(3 * math.log(100) / 100)
    assert c.resource_cap == 10
    g = generator_config(c, FactorialPlan())
    assert g.n == 100 and g.block.shape == (4, 4)


def test_balance_covariates_tiers():
    from netcausal.netcore import baseline_config, sample_hmmb_params

    p = sample_hmmb_params(baseline_config(20), 0)
    x, tiers = balance_covariates(p)
    assert x.shape == (20, 4) and tiers == ((0,), (1, 2, 3))


# Runner ------------------------------------------------------------------------


def test_run_task_rows_are_complete_and_deterministic():
    plan = tiny_plan()
    cell = plan.cells()[5]
    a = run_task(plan, 5, cell, 0)
    b = run_task(plan, 5, cell, 0)
    assert a["rows"] == b["rows"]
    assert {r["estimand"] for r in a["rows"]} == {"primary_avg", "k_neighbors(k=1)"}
    for r in a["rows"]:
        assert set(REPLICATION_COLUMNS) <= set(r)
        assert r["status"] == "ok" and r["imse"] >= 0


def test_run_task_failures_become_rows():
    plan = tiny_plan(network_overrides={"timespan": -1.0})
    cell = next(c for c in plan.cells() if c.estimator == "NM")
    rec = run_task(plan, 0, cell, 0)
    assert all(r["status"] == "error" and r["message"] for r in rec["rows"])


def test_resume_after_interruption_matches_full_run(tmp_path):
    plan = tiny_plan()
    full = run_factorial(plan, tmp_path / "full")
    part = run_factorial(plan, tmp_path / "part", max_tasks=7)
    assert not is_complete(plan, part)
    # a torn final line from a crash mid-write is ignored
    with open(tmp_path / "part" / LEDGER_NAME, "a") as fh:
        fh.write('{"task": "size=30|dens')
    resumed = run_factorial(plan, tmp_path / "part")
    assert is_complete(plan, resumed)
    assert json.dumps(resumed) == json.dumps(full)


def test_parallel_run_matches_serial(tmp_path):
    plan = tiny_plan(subset=tuple(range(0, 24, 3)))
    serial = run_factorial(plan, tmp_path / "a")
    parallel = run_factorial(plan, tmp_path / "b", threads=2)
    assert json.dumps(serial) == json.dumps(parallel)


def test_shared_truth_across_cells():
    plan = tiny_plan()
    cells = [c for c in plan.cells() if c.confounder == "none"]
    truths = {run_task(plan, 0, c, 1)["rows"][0]["truth"] for c in cells}
    assert len(truths) == 1


def test_subset_order_does_not_change_results(tmp_path):
    plan = tiny_plan()
    full = {(r["cell_id"], r["replication"], r["estimand"]): r
            for r in run_factorial(plan, tmp_path / "a")}
    sub = run_factorial(tiny_plan(subset=(11, 2, 7)), tmp_path / "b")
    for r in sub:
        assert json.dumps(r) == json.dumps(full[(r["cell_id"], r["replication"], r["estimand"])])


# Report ------------------------------------------------------------------------


def _rows(tmp_path):
    return run_factorial(tiny_plan(subset=(0, 1, 2, 3)), tmp_path / "run")


def test_report_columns_and_round_trip(tmp_path):
    rows = _rows(tmp_path)
    paths = emit_report(rows, tmp_path / "rep")
    lines = paths["replications"].read_text().splitlines()
    assert lines[0] == "# columns: " + ",".join(REPLICATION_COLUMNS)
    assert lines[1] == ",".join(REPLICATION_COLUMNS)
    back = read_csv(paths["replications"])
    assert len(back) == len(rows)
    for a, b in zip(back, rows):
        for c in REPLICATION_COLUMNS:
            if isinstance(b[c], float) and math.isnan(b[c]):
                assert math.isnan(a[c])
            elif b[c] == "":
                assert a[c] is None
            else:
                assert a[c] == b[c], c
    cells = read_csv(paths["cells"])
    assert list(cells[0]) == list(CELL_COLUMNS)
    doc = json.loads(paths["summary"].read_text())
    assert doc["columns"] == list(CELL_COLUMNS)


def test_empty_report_has_header_only(tmp_path):
    paths = emit_report([], tmp_path)
    assert paths["replications"].read_text().splitlines() == [
        "# columns: " + ",".join(REPLICATION_COLUMNS), ",".join(REPLICATION_COLUMNS)]
    assert read_csv(paths["cells"]) == []


def test_read_csv_rejects_foreign_files(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_csv(tmp_path / "x.csv")


def test_aggregate_and_coverage():
    base = {f: 1 for f in FACTOR_ORDER}
    rows = [
        {**base, "cell_index": 0, "cell_id": "c", "replication": r, "estimand": "e",
         "status": "ok", "imse": float(r), "width": 1.0, "covered": r % 2, "estimate": 1.0,
         "truth": 0.0}
        for r in range(4)
    ] + [{**base, "cell_index": 0, "cell_id": "c", "replication": 4, "estimand": "e",
          "status": "error", "imse": None, "width": None, "covered": None}]
    (c,) = aggregate(rows)
    assert c.replications == 5 and c.failures == 1
    assert c.imse_mean == 1.5 and c.coverage == 0.5 and c.width_mean == 1.0
    (s,) = coverage_summary(rows, 0.9)
    assert s["coverage"] == 0.5 and s["level"] == 0.9


# ANOVA -------------------------------------------------------------------------


def _grid_rows(levels: dict, reps: int, rng, effect=None):
    rows = []
    names = list(levels)
    for combo in itertools.product(*levels.values()):
        for r in range(reps):
            d = dict(zip(names, combo))
            d["imse"] = float(rng.normal() + (effect(d) if effect else 0.0))
            rows.append(d)
    return rows


def test_anova_hand_computed_two_by_two():
    rows = [
        {"a": 0, "b": 0, "imse": 1.0}, {"a": 0, "b": 0, "imse": 3.0},
        {"a": 0, "b": 1, "imse": 5.0}, {"a": 0, "b": 1, "imse": 7.0},
        {"a": 1, "b": 0, "imse": 2.0}, {"a": 1, "b": 0, "imse": 4.0},
        {"a": 1, "b": 1, "imse": 10.0}, {"a": 1, "b": 1, "imse": 12.0},
    ]
    t = anova(rows, ["a", "b"])
    # cell means 2, 6, 3, 11; grand mean 5.5
    assert t.row("a").ss == pytest.approx(18.0)
    assert t.row("b").ss == pytest.approx(72.0)
    assert t.row("a x b").ss == pytest.approx(8.0)
    assert t.residual.ss == pytest.approx(8.0) and t.residual.df == 4
    assert t.total_ss == pytest.approx(106.0)


def test_anova_sum_of_squares_identity():
    rng = np.random.default_rng(0)
    levels = {"p": range(3), "q": range(4), "r": range(2)}
    rows = _grid_rows(levels, 3, rng, lambda d: d["p"] * d["q"] - d["r"])
    t = anova(rows, list(levels))
    y = np.array([r["imse"] for r in rows]).reshape(3, 4, 2, 3)
    within = float(((y - y.mean(axis=-1, keepdims=True)) ** 2).sum())
    explained = sum(r.ss for r in t.rows)
    assert explained + within == pytest.approx(t.total_ss, rel=1e-10)
    assert t.residual.ss == pytest.approx(within, rel=1e-8)
    assert sum(r.df for r in t.rows) + t.residual.df == t.total_df


def test_anova_term_order_does_not_matter():
    rng = np.random.default_rng(1)
    levels = {"p": range(3), "q": range(2)}
    rows = _grid_rows(levels, 2, rng, lambda d: d["p"] * d["q"])
    a = anova(rows, ["p", "q"], terms=[("p", "q")])
    b = anova(rows, ["p", "q"], terms=[("q", "p")])
    assert a.rows[0].ss == pytest.approx(b.rows[0].ss)


def test_anova_rejects_unbalanced_and_high_order():
    rng = np.random.default_rng(2)
    rows = _grid_rows({"p": range(2), "q": range(2)}, 1, rng)
    with pytest.raises(DataError, match="p=1, q=1"):
        anova(rows[:-1], ["p", "q"])
    rows4 = _grid_rows({f: range(2) for f in "abcd"}, 1, rng)
    with pytest.raises(ConfigurationError):
        anova(rows4, list("abcd"), terms=[tuple("abcd")])
    assert len(all_terms(list("abcd"))) == 4 + 6 + 4


def test_composite_factor():
    rows = composite([{"x": 1, "y": "a"}], "xy", ["x", "y"])
    assert rows[0]["xy"] == "1/a"


def test_anova_rows_from_plan_have_composites():
    base = {f: 0 for f in FACTOR_ORDER}
    rows = anova_rows([{**base, "status": "ok", "estimand": "e", "imse": 1.0},
                       {**base, "status": "error", "estimand": "e", "imse": None}])
    assert len(rows) == 1 and set(ANOVA_FACTORS) <= set(rows[0])


# Confounder study ---------------------------------------------------------------


def test_confounder_study_smoke():
    cfg = ConfounderStudyConfig(networks=1, assignments=2, n=40, treated=8, sample_count=200,
                                confounders=("independent", "activity"))
    rows = run_confounder_study(cfg, 3)
    assert [(r.confounder, r.included) for r in rows] == [
        ("independent", False), ("independent", True), ("activity", False), ("activity", True)]
    assert all(r.replications == 2 for r in rows)
    assert rows == run_confounder_study(cfg, 3)


# CLI ---------------------------------------------------------------------------


def _cli(tmp_path, *args):
    return main(["--out", str(tmp_path), *args])


def test_cli_generate_infer_bound(tmp_path, capsys):
    assert _cli(tmp_path, "--seed", "3", "generate", "--n", "24") == 0
    assert (tmp_path / "params.json").exists() and (tmp_path / "edges.csv").exists()
    out = tmp_path / "post"
    assert main(["--seed", "1", "--out", str(out), "infer", "--edges", str(tmp_path / "edges.csv"),
                 "--k", "2", "--iterations", "20", "--burn-in", "10", "--chains", "1"]) == 0
    assert (out / "posterior.json").exists() and (out / "trace.bin").exists()
    assert _cli(tmp_path, "bound", "--params", str(tmp_path / "params.json")) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc


def test_cli_simulate_design_estimate(tmp_path):
    assert _cli(tmp_path, "--seed", "2", "simulate", "--n", "40", "--samples", "200",
                "--estimator", "BNS") == 0
    for name in ("params.json", "edges.csv", "science.json", "observed.csv", "estimates.json"):
        assert (tmp_path / name).exists(), name
    header = (tmp_path / "observed.csv").read_text().splitlines()[0]
    assert header == "unit,z,y"
    d = tmp_path / "d"
    assert main(["--out", str(d), "design", "--params", str(tmp_path / "params.json"),
                 "--edges", str(tmp_path / "edges.csv"), "--scheme", "RCG",
                 "--grouping-draws", "10", "--calibration-draws", "20", "--max-draws", "20"]) == 0
    assert (d / "assignment.csv").exists() and (d / "balance.json").exists()
    e = tmp_path / "e"
    assert main(["--out", str(e), "estimate", "--edges", str(tmp_path / "edges.csv"),
                 "--observed", str(tmp_path / "observed.csv"), "--estimator", "DM"]) == 0
    assert json.loads((e / "estimates.json").read_text())


def test_cli_factorial_and_report(tmp_path):
    plan = tiny_plan(confounders=("none",), schemes=("CR", "SR"), estimators=("NM", "DM"),
                     replications=2)
    write_plan(plan, tmp_path / "plan_in.json")
    run = tmp_path / "run"
    assert main(["--out", str(run), "factorial", "--plan", str(tmp_path / "plan_in.json")]) == 0
    assert (run / "replications.csv").exists() and (run / LEDGER_NAME).exists()
    rep = tmp_path / "rep"
    assert main(["--out", str(rep), "report", "--results", str(run)]) == 0
    doc = json.loads((rep / "summary.json").read_text())
    assert "anova" in doc and doc["anova"][-1]["term"] == "Residual"
    # a subset that leaves the grid unbalanced is a data error for the ANOVA only
    sub = tmp_path / "sub"
    assert main(["--out", str(sub), "factorial", "--plan", str(tmp_path / "plan_in.json"),
                 "--subset", "0,1,2"]) == 0
    assert main(["--out", str(tmp_path / "r2"), "report", "--results", str(sub)]) == 2
    assert main(["--out", str(tmp_path / "r3"), "report", "--results", str(sub), "--no-anova"]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["nonsense"]) == 1
    assert main(["--seed", "-1", "generate"]) == 1
    assert main(["--threads", "0", "generate"]) == 1
    assert _cli(tmp_path, "infer", "--edges", str(tmp_path / "missing.csv"), "--k", "2") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["--config", str(tmp_path / "bad.json"), "generate"]) in (1, 2)
    assert _cli(tmp_path, "factorial", "--subset", "99999") == 1
    assert _cli(tmp_path, "report", "--results", str(tmp_path / "nowhere")) == 2
