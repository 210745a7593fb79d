"""Command-line surface.

Global flags come before the subcommand::

    netcausal [--seed S] [--threads N] [--config FILE] [--out DIR] <command> ...

``--config`` is a JSON object of settings for the chosen command: generator
fields for ``generate``, sampler fields for ``infer``, a plan for
``factorial`` and ``report``. Command flags override it.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import analysis, design, netcore, science
from ..errors import (
    ConfigurationError,
    DataError,
    EnumerationCapExceeded,
    EstimatorInapplicable,
    NetcausalError,
    NumericError,
)
from ..seeding import derive_rng
from .anova import anova as run_anova, composite
from . import plan as plan_mod
from . import report as report_mod
from . import runner

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ANOVA_FACTORS = {
    "NP": ("size", "density", "community_exponent", "block_scale", "alpha"),
    "POM": ("confounder", "covariate_fn", "exposure_fn"),
    "TR": ("resource",),
    "RS": ("scheme",),
    "A": ("estimator",),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return doc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _generator(args, cfg: dict) -> netcore.GeneratorConfig:
    overrides = dict(cfg)
    for key in ("sparsity", "alpha", "timespan"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    for key in ("block", "pseudocounts", "lifestyle_probs"):
        if key in overrides:
            overrides[key] = np.asarray(overrides[key], dtype=float)
    n = int(overrides.pop("n", args.n))
    if args.preset == "study":
        return netcore.study_config(n, **overrides)
    return netcore.baseline_config(n, **overrides)


def _network_and_params(args, cfg: dict):
    """Params from --params, otherwise a fresh draw from the generator settings."""
    if getattr(args, "params", None):
        params = netcore.read_params(args.params)
        net = (netcore.read_edge_list(args.edges, params.n) if getattr(args, "edges", None)
               else netcore.sample_network(params, derive_rng(args.seed, "edges")))
        return params, net
    params = netcore.sample_hmmb_params(_generator(args, cfg), derive_rng(args.seed, "params"))
    return params, netcore.sample_network(params, derive_rng(args.seed, "edges"))


def cmd_generate(args, cfg) -> int:
    params, net = _network_and_params(args, cfg)
    out = _out(args)
    netcore.write_params(params, out / "params.json")
    netcore.write_edge_list(net, out / "edges.csv")
    print(f"generated n={net.n} edges={int(net.matrix.nnz)} -> {out}")
    return EXIT_OK


def cmd_infer(args, cfg) -> int:
    from ..hmmb_infer import McmcConfig, run_mcmc, write_summary, write_trace

    net = netcore.read_edge_list(args.edges, args.n)
    settings = dict(cfg)
    for key in ("iterations", "burn_in", "chains", "init", "timespan"):
        v = getattr(args, key)
        if v is not None:
            settings[key] = v
    if "alpha_support" in settings:
        settings["alpha_support"] = tuple(settings["alpha_support"])
    post = run_mcmc(net, args.k, McmcConfig(**settings), seed=args.seed)
    out = _out(args)
    write_summary(post, out / "posterior.json", args.level)
    write_trace(post, out / "trace.bin")
    print(f"posterior samples={post.samples} chain={post.selected_chain} -> {out}")
    return EXIT_OK


def cmd_bound(args, cfg) -> int:
    from ..hmmb_infer import bound_widths

    params = netcore.read_params(args.params)
    widths = bound_widths(params, args.level)
    finite = widths[np.isfinite(widths)]
    doc = {
        "level": args.level,
        "mean_width": float(finite.mean()) if finite.size else None,
        "singular_nodes": [int(i) for i in np.flatnonzero(~np.isfinite(widths).all(axis=1))],
        "widths": [[None if not np.isfinite(v) else float(v) for v in row] for row in widths],
    }
    out = _out(args)
    _dump(doc, out / "bounds.json")
    print(f"mean Cramer-Rao width {doc['mean_width']} -> {out / 'bounds.json'}")
    return EXIT_OK


def _targets(names: Sequence[str], k: int) -> list[science.EstimandSpec]:
    out = []
    for name in names:
        out.append(science.EstimandSpec(name, k=k if name.startswith("k_neighbors") else None))
    return out


def _write_observed(path: Path, z: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "z", "y"])
        for i, (zi, yi) in enumerate(zip(z, y)):
            w.writerow([i, int(zi), repr(float(yi))])


def _read_observed(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        units = np.array([int(r["unit"]) for r in rows])
        z = np.array([int(r["z"]) for r in rows], dtype=np.int8)
        y = np.array([float(r["y"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: expected columns unit,z,y ({exc})") from exc
    if not np.array_equal(np.sort(units), np.arange(units.size)):
        raise DataError(f"{path}: units must be 0..n-1")
    order = np.argsort(units)
    return z[order], y[order]


def cmd_simulate(args, cfg) -> int:
    params, net = _network_and_params(args, cfg.get("network", {}))
    model = science.OutcomeModelSpec.factorial(args.confounder, args.covariate_fn, args.exposure_fn,
                                         params.k)
    if "model" in cfg:
        model = science.OutcomeModelSpec.from_json({**model.to_json(), **cfg["model"]})
    table = science.build_science(net, model, params, derive_rng(args.seed, "science"))
    cap = max(1, int(round(args.resource * net.n)))
    a = design.draw_assignment(args.scheme, net, cap, design.SchemeConfig(k=args.k),
                               derive_rng(args.seed, "design"))
    y = science.observe(table, a.z)
    targets = _targets(args.estimands, args.k)
    ests = analysis.estimate(args.estimator, y, a.z, net, targets,
                             {"activity": params.lam, "membership": params.pi},
                             args.samples, derive_rng(args.seed, "estimate"), args.level)
    ests = [e.with_truth(float(science.compute_estimand(table, t))) for e, t in zip(ests, targets)]
    out = _out(args)
    netcore.write_params(params, out / "params.json")
    netcore.write_edge_list(net, out / "edges.csv")
    science.write_science(table, out / "science.json")
    _write_observed(out / "observed.csv", a.z, y)
    analysis.write_estimates(ests, out / "estimates.json")
    for e in ests:
        print(f"{e.target}: estimate {e.point:.4f} truth {e.truth:.4f}")
    return EXIT_OK


def cmd_design(args, cfg) -> int:
    params, net = _network_and_params(args, cfg.get("network", {}))
    cap = args.cap if args.cap is not None else max(1, int(round(args.resource * net.n)))
    rng = derive_rng(args.seed, "design")
    grouping = design.tertile_grouping(net, cap, rng, args.grouping_draws)
    x, tiers = runner.balance_covariates(params)
    if args.scheme in design.RERANDOMIZATIONS:
        crit = design.calibrate_thresholds(net, x, tiers, grouping, cap, rng, args.calibration_draws,
                                           max_draws=args.max_draws)
        a = design.rerandomize("CR", crit, args.scheme, net, x, grouping, cap, rng)
    else:
        a = design.draw_assignment(args.scheme, net, cap, design.SchemeConfig(k=args.k), rng)
    labels = design.exposure_groups(net, a.z, grouping)
    smd = design.standardized_mean_difference(x, labels, grouping.size - 1, 0)
    out = _out(args)
    design.write_assignment_csv(out / "assignment.csv", a, labels, grouping)
    doc = {
        "scheme": args.scheme, "treated": a.treated, "grouping": grouping.labels,
        "group_sizes": np.bincount(labels, minlength=grouping.size).tolist(),
        "smd": [float(v) for v in smd],
        "tier_balance": [float(design.tier_balance(x, labels, t, grouping.size)) for t in tiers],
        "metadata": {k: v for k, v in a.metadata.items() if isinstance(v, (int, float, bool, str))},
    }
    _dump(doc, out / "balance.json")
    print(f"{args.scheme}: treated {a.treated}, |SMD| {np.round(np.abs(smd), 3).tolist()}")
    return EXIT_OK


def cmd_estimate(args, cfg) -> int:
    z, y = _read_observed(args.observed)
    net = netcore.read_edge_list(args.edges, z.size)
    covs = {}
    if args.params:
        params = netcore.read_params(args.params)
        covs = {"activity": params.lam, "membership": params.pi}
    targets = _targets(args.estimands, args.k)
    ests = analysis.estimate(args.estimator, y, z, net, targets, covs, args.samples,
                             derive_rng(args.seed, "estimate"), args.level)
    out = _out(args)
    analysis.write_estimates(ests, out / "estimates.json")
    for e in ests:
        print(f"{e.target}: {e.point:.6g}" + (f" [{e.interval[0]:.4g}, {e.interval[1]:.4g}]"
                                              if e.interval is not None else ""))
    return EXIT_OK


def _plan(args, cfg) -> plan_mod.FactorialPlan:
    doc = dict(cfg.get("plan", cfg))
    if args.plan:
        doc.update(plan_mod.read_plan(args.plan).to_json())
    if args.seed_given:
        doc["base_seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        doc["replications"] = args.replications
    if getattr(args, "subset", None):
        doc["subset"] = [int(i) for i in args.subset.split(",")]
    return plan_mod.FactorialPlan.from_json(doc)


def cmd_factorial(args, cfg) -> int:
    plan = _plan(args, cfg)
    out = _out(args)
    plan_mod.write_plan(plan, out / "plan.json")
    rows = runner.run_factorial(plan, out, args.threads, max_tasks=args.max_tasks)
    report_mod.emit_report(rows, out)
    failed = sum(r["status"] != "ok" for r in rows)
    done = runner.is_complete(plan, rows)
    print(f"{len(rows)} result rows ({failed} failed){'' if done else ', incomplete'} -> {out}")
    return EXIT_OK


def anova_rows(rows: Sequence[dict], estimand: str | None = None) -> list[dict]:
    """Successful rows with the composite NP/POM/TR/RS/A factors attached."""
    ok = [r for r in rows if r["status"] == "ok" and (estimand is None or r["estimand"] == estimand)]
    for name, parts in ANOVA_FACTORS.items():
        ok = composite(ok, name, parts)
    return ok


def cmd_report(args, cfg) -> int:
    src = Path(args.results)
    plan = plan_mod.read_plan(src / "plan.json")
    rows = runner.collect_rows(plan, runner.read_ledger(src / runner.LEDGER_NAME))
    if not rows:
        raise DataError(f"{src}: no results in ledger")
    table = None
    if not args.no_anova:
        data = anova_rows(rows, args.estimand or plan.estimands[0])
        factors = [f for f in ANOVA_FACTORS if len({r[f] for r in data}) > 1]
        if factors:
            table = run_anova(data, factors, response="imse")
    out = _out(args)
    report_mod.emit_report(rows, out, anova_table=table)
    if table is not None:
        for r in (*table.rows, table.residual):
            print(f"{r.term:<28} df={r.df:<6} ms={r.ms:.6g}")
    print(f"report -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netcausal", description=__doc__.split("\n\n")[0])
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", default=None, help="JSON settings for the command")
    p.add_argument("--out", default=".", help="output directory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def network_flags(sp, params=True):
        sp.add_argument("--n", type=int, default=128)
        sp.add_argument("--preset", choices=("baseline", "study"), default="baseline")
        sp.add_argument("--sparsity", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--timespan", type=float)
        if params:
            sp.add_argument("--params", help="existing params.json instead of a fresh draw")
            sp.add_argument("--edges", help="edge list matching --params")

    sp = sub.add_parser("generate", help="draw HMMB parameters and a network")
    network_flags(sp, params=False)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("infer", help="HMMB posterior from an edge list")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--init", choices=("full", "partial", "none"))
    sp.add_argument("--timespan", type=float)
    sp.add_argument("--level", type=float, default=0.9)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("bound", help="Cramer-Rao widths for memberships")
    sp.add_argument("--params", required=True)
    sp.add_argument("--level", type=float, default=0.9)
    sp.set_defaults(func=cmd_bound)

    def experiment_flags(sp):
        sp.add_argument("--estimator", default="BNS", choices=sorted(analysis.ESTIMATOR_LEVELS))
        sp.add_argument("--estimands", nargs="+", default=["primary_avg", "k_neighbors"])
        sp.add_argument("--k", type=int, default=1)
        sp.add_argument("--samples", type=int, default=4000)
        sp.add_argument("--level", type=float, default=0.9)

    sp = sub.add_parser("simulate", help="one experiment end to end")
    network_flags(sp)
    experiment_flags(sp)
    sp.add_argument("--confounder", default="none", choices=("none", "activity", "membership"))
    sp.add_argument("--covariate-fn", dest="covariate_fn", default="identity")
    sp.add_argument("--exposure-fn", dest="exposure_fn", default="sum")
    sp.add_argument("--scheme", default="CR", choices=design.SCHEMES)
    sp.add_argument("--resource", type=float, default=0.1)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("design", help="assignment with balance diagnostics")
    network_flags(sp)
    sp.add_argument("--scheme", default="CR", choices=(*design.SCHEMES, *design.RERANDOMIZATIONS))
    sp.add_argument("--cap", type=int)
    sp.add_argument("--resource", type=float, default=0.1)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--grouping-draws", dest="grouping_draws", type=int, default=200)
    sp.add_argument("--calibration-draws", dest="calibration_draws", type=int, default=200)
    sp.add_argument("--max-draws", dest="max_draws", type=int, default=1000)
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("estimate", help="estimators on observed data")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--observed", required=True, help="CSV with columns unit,z,y")
    sp.add_argument("--params", help="params.json supplying network covariates")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("factorial", help="run (or resume) a factorial plan")
    sp.add_argument("--plan", help="plan JSON (defaults to --config or the desk plan)")
    sp.add_argument("--replications", type=int)
    sp.add_argument("--subset", help="comma-separated cell indices")
    sp.add_argument("--max-tasks", dest="max_tasks", type=int)
    sp.set_defaults(func=cmd_factorial)

    sp = sub.add_parser("report", help="aggregate results and run the ANOVA")
    sp.add_argument("--results", required=True, help="directory written by factorial")
    sp.add_argument("--estimand", help="estimand for the ANOVA (default: first in plan)")
    sp.add_argument("--no-anova", dest="no_anova", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EstimatorInapplicable) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, EnumerationCapExceeded) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NetcausalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


__all__ = ["main", "build_parser", "anova_rows", "ANOVA_FACTORS"]
