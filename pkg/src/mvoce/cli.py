"""Command-line front end.

    mvoce [--seed N] [--output PATH] [--format json|csv] [--threads K] COMMAND ...

Commands read a YAML or JSON config (``--config``) and accept ``--set
path=value`` overrides. JSON reports are one object with ``config``,
``result`` and ``runtime_s``. CSV reports are a header plus one row per
result row. Failures print a JSON error object on stderr and exit with a
code that depends on the error category.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, OCEError
from .losses import Family
from .mnig_em import em_fit, em_fit_multistart
from .oracle_bench import mc_benchmark, oracle_allocation
from .sa_engine import solve_full
from .scenarios import RngStream, load_csv
from .sensitivity import alloc_marginal, exp_shock_closed_form, joint_samples, risk_marginal
from .tables import TABLE_IDS, reproduce_table

EXIT_CODES = {
    "config": 2,
    "dimension": 2,
    "data": 3,
    "singular_jacobian": 4,
    "singular_sensitivity": 4,
    "degenerate_step": 4,
    "non_pd_scatter": 4,
    "not_twice_differentiable": 5,
    "not_applicable": 5,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _flatten(obj, prefix: str = "") -> dict:
    """Nested dicts and lists to flat columns: keys joined by '_', list positions 1-based."""
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}_{k}" if prefix else str(k)))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj, 1):
            out.update(_flatten(v, f"{prefix}_{i}"))
    else:
        out[prefix] = obj
    return out


def _csv_text(rows: list[dict]) -> str:
    columns: list[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns)
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# each command returns (config echo, result, csv rows)


def cmd_solve(args):
    cfg = cfgmod.load_config(cfgmod.SolveConfig, args.config, args.set, args.seed)
    spec, model = cfgmod.build_loss_and_model(cfg)
    box = cfg.box.build()
    if box.dim != spec.dim:
        raise ConfigError(f"box: dimension {box.dim} does not match loss dimension {spec.dim}")
    est = solve_full(spec, model, cfg.schedule.build(), box, cfg.m0, RngStream(cfg.seed),
                     level=cfg.ci_level, burn_in=cfg.burn_in, eps=cfg.eps)
    result = {"provenance": "sa", **est.to_dict()}
    row = {"seed": cfg.seed, "risk": est.risk}
    row.update({f"m{j + 1}": float(v) for j, v in enumerate(est.m_bar)})
    if est.ci is not None:
        for j, (lo, hi) in enumerate(est.ci, 1):
            row[f"ci{j}_lo"], row[f"ci{j}_hi"] = float(lo), float(hi)
    row.update({"iterations": est.iterations, "boundary_hits": est.boundary_hits})
    return cfg.model_dump(), result, [row]


def cmd_oracle(args):
    cfg = cfgmod.load_config(cfgmod.OracleConfig, args.config, args.set)
    m, risk = oracle_allocation(cfg.build())
    result = {"provenance": "oracle", "m_star": m.tolist(), "risk": risk}
    return cfg.model_dump(), result, [_flatten(result)]


def cmd_benchmark(args):
    cfg = cfgmod.load_config(cfgmod.BenchmarkConfig, args.config, args.set, args.seed)
    spec, model = cfgmod.build_loss_and_model(cfg)
    res = mc_benchmark(spec, model, cfg.n_samples, cfg.x0, RngStream(cfg.seed), cfg.tol, cfg.max_eval)
    result = {"provenance": "mc", **res.to_dict()}
    return cfg.model_dump(), result, [_flatten(result)]


def cmd_shock(args):
    cfg = cfgmod.load_config(cfgmod.ShockConfig, args.config, args.set, args.seed)
    spec, model = cfgmod.build_loss_and_model(cfg)
    shock = cfg.shock.build()
    stream = RngStream(cfg.seed)
    if cfg.m_source == "oracle":
        m_star, _ = oracle_allocation(cfg.oracle_case())
    else:
        est = solve_full(spec, model, cfg.schedule.build(), cfg.box.build(), None, stream.spawn(1), level=None)
        m_star = est.m_bar
    joint = joint_samples(model, shock, stream, cfg.n_samples)
    result = {"m_source": cfg.m_source, "m_star": m_star.tolist()}
    if spec.twice_differentiable:
        report = alloc_marginal(spec, joint, m_star)
        result.update(report.to_dict())
        if shock.kind in ("deterministic", "independent"):
            # Y independent of X: both marginals reduce to minus the shock mean
            se = np.maximum(report.se["alloc_marginal"], 1e-12)
            target = -np.asarray(shock.mean)
            result["independent_identity_pass"] = bool(np.all(np.abs(report.alloc_marginal - target) <= 3 * se))
        shock_on_first = not np.any(joint[:, 3] != 0) if spec.dim == 2 else False
        if spec.family is Family.EXPONENTIAL and shock_on_first:
            closed = exp_shock_closed_form(spec.params, spec.alpha, joint, m_star)
            result["closed_form"] = closed.to_dict()
    else:
        value, se = risk_marginal(spec, joint, m_star)
        result.update({"risk_marginal": value, "se": {"risk_marginal": se}})
    flat = _flatten({k: v for k, v in result.items() if k != "closed_form"})
    return cfg.model_dump(), result, [flat]


def cmd_fit_mnig(args):
    overrides = list(args.set or [])
    if args.data is not None:
        overrides.append(f"data={args.data}")
    cfg = cfgmod.load_config(cfgmod.FitConfig, args.config, overrides, args.seed)
    data = load_csv(Path(cfg.data), header=cfg.header)
    em_cfg = cfg.em_config(data.shape[1])
    if cfg.starts > 1:
        res = em_fit_multistart(em_cfg, data, starts=cfg.starts, seed=cfg.seed)
    else:
        res = em_fit(em_cfg, data)
    result = res.to_report()
    result["log_likelihood"] = res.log_likelihood
    row = _flatten({"iterations": res.iterations, "converged": res.converged,
                    "log_likelihood": res.log_likelihood, **res.params.to_config()})
    return cfg.model_dump(), result, [row]


def cmd_reproduce_table(args):
    echo = {"table": args.table, "seed": args.seed, "n_iter": args.n_iter, "mc_samples": args.mc_samples,
            "ci_level": args.ci_level, "threads": args.threads}
    report = reproduce_table(args.table, args.seed, args.n_iter, args.mc_samples, args.ci_level, args.threads)
    return echo, report.to_dict(), report.rows


COMMANDS = {
    "solve": cmd_solve,
    "oracle": cmd_oracle,
    "benchmark": cmd_benchmark,
    "shock": cmd_shock,
    "fit-mnig": cmd_fit_mnig,
    "reproduce-table": cmd_reproduce_table,
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="random seed (overrides the config file)")
    parser.add_argument("--output", "-o", default=d(None), help="write the report here instead of stdout")
    parser.add_argument("--format", choices=("json", "csv"), default=d("json"))
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads for table rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvoce", description="Multivariate OCE risk allocation toolkit")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--config", "-c", help="YAML or JSON config file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config field")
        return p

    with_config("solve", "projected stochastic approximation with averaging and confidence intervals")
    with_config("oracle", "closed-form allocation for the bivariate Gaussian exponential case")
    with_config("benchmark", "sample-average benchmark minimized by Nelder-Mead")
    with_config("shock", "marginal risk and allocation responses to a shock")
    fit = with_config("fit-mnig", "EM fit of an MNIG law to CSV data")
    fit.add_argument("--data", help="CSV file with one observation per row")
    tab = sub.add_parser("reproduce-table", parents=[common], help="rerun one benchmark table")
    tab.add_argument("table", choices=TABLE_IDS)
    tab.add_argument("--n-iter", type=int, default=None, help="SA iterations per row (default 500000)")
    tab.add_argument("--mc-samples", type=int, default=500_000, help="sample size of the MC benchmark")
    tab.add_argument("--ci-level", type=float, default=0.95)
    return parser


def _emit(text: str, output) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reproduce-table" and args.seed is None:
        args.seed = 0
    if args.threads < 1:
        args.threads = 1
    start = time.perf_counter()
    try:
        echo, result, rows = COMMANDS[args.command](args)
    except OCEError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return EXIT_CODES.get(exc.category, 1)
    runtime = time.perf_counter() - start
    if args.format == "csv":
        text = _csv_text(_plain(rows))
    else:
        text = json.dumps(_plain({"config": echo, "result": result, "runtime_s": runtime}), indent=2) + "\n"
    _emit(text, args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
