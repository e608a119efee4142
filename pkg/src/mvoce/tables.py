"""Benchmark tables: Gaussian exponential-loss grids and MNIG SA-vs-MC runs.

Every estimate column carries its provenance as a prefix: ``sa_`` for the
stochastic solver, ``oracle_`` for closed forms and ``mc_`` for the
sample-average benchmark. Row ``i`` runs with seed ``seed + i``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .losses import LossSpec
from .oracle_bench import GaussianExpCase, mc_benchmark, oracle_allocation
from .sa_engine import Box, StepSchedule, solve_full
from .scenarios import MNIGModel, MNIGParams, RngStream

__all__ = ["TABLE_IDS", "MNIG_FITTED", "TableReport", "gaussian_cases", "mnig_cases", "reproduce_table"]

TABLE_IDS = ("t2", "t3", "t4", "t5", "t6")
RHO_GRID = (-0.9, -0.5, 0.0, 0.5, 0.9)
GAUSSIAN_TABLES = {"t2": ((1.0, 2.0), 0.0), "t3": ((1.0, 1.0), 1.0), "t4": ((1.0, 2.0), 1.0)}

# MNIG fit to three daily index log-return series; Gamma is rescaled to unit determinant
MNIG_FITTED = dict(
    alpha=365.78,
    beta=[-64.28, 41.45, 7.35],
    delta=0.00373,
    mu=[0.00084, 0.00024, 0.00055],
    gamma=[[2.338, 1.796, 2.080], [1.796, 2.327, 2.088], [2.080, 2.088, 2.555]],
)

GAUSSIAN_M_TOL = 0.02
GAUSSIAN_R_TOL = 0.05
MNIG_TOL = 5e-3


@dataclass(frozen=True)
class MNIGCase:
    label: str
    loss: LossSpec
    target_risk: float


def gaussian_cases(table_id: str) -> list[GaussianExpCase]:
    lam, alpha = GAUSSIAN_TABLES[table_id]
    return [GaussianExpCase(lam, alpha, rho=r) for r in RHO_GRID]


def mnig_params() -> MNIGParams:
    return MNIGParams.with_normalized_gamma(**MNIG_FITTED)


def mnig_cases(table_id: str) -> list[MNIGCase]:
    if table_id == "t5":
        return [MNIGCase("polynomial", LossSpec.polynomial((2.0, 2.0, 2.0), 1.0), 0.3133)]
    # the reference numbers for this table match the exponential loss, not the polynomial one
    # named in its caption, so both are run against the same target
    return [
        MNIGCase("polynomial", LossSpec.polynomial((1.0, 2.0, 3.0), 1.0), 0.3753),
        MNIGCase("exponential", LossSpec.exponential((1.0, 2.0, 3.0), 1.0), 0.3753),
    ]


@dataclass
class TableReport:
    table: str
    seed: int
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    def to_dict(self) -> dict:
        return {"table": self.table, "seed": self.seed, "passed": self.passed, "rows": self.rows}


def _ci_columns(prefix: str, ci) -> dict:
    out = {}
    for j in range(ci.shape[0] if ci is not None else 0):
        out[f"{prefix}ci{j + 1}_lo"] = float(ci[j, 0])
        out[f"{prefix}ci{j + 1}_hi"] = float(ci[j, 1])
    return out


def _gaussian_row(case: GaussianExpCase, seed: int, sched: StepSchedule, level: float) -> dict:
    start = time.perf_counter()
    est = solve_full(case.loss(), case.model(), sched, Box.cube(0.0, 3.0, 2), [0.0, 0.0], RngStream(seed), level=level)
    runtime = time.perf_counter() - start
    m_star, risk = oracle_allocation(case)
    tol = np.maximum(2.0 * est.ci_halfwidth, GAUSSIAN_M_TOL)
    ok = bool(np.all(np.abs(est.m_bar - m_star) <= tol) and abs(est.risk - risk) <= GAUSSIAN_R_TOL)
    row = {"rho": case.rho, "lambda1": case.lam[0], "lambda2": case.lam[1], "alpha": case.alpha, "seed": seed,
           "sa_risk": est.risk, "sa_m1": float(est.m_bar[0]), "sa_m2": float(est.m_bar[1])}
    row.update(_ci_columns("sa_", est.ci))
    row.update({"oracle_risk": risk, "oracle_m1": float(m_star[0]), "oracle_m2": float(m_star[1]),
                "runtime_s": runtime, "pass": ok})
    return row


def _mnig_row(case: MNIGCase, seed: int, sched: StepSchedule, level: float, mc_samples: int) -> dict:
    model = MNIGModel(mnig_params())
    d = case.loss.dim
    stream = RngStream(seed)
    start = time.perf_counter()
    est = solve_full(case.loss, model, sched, Box.cube(0.0, 2.0, d), np.zeros(d), stream.spawn(0), level=level)
    sa_time = time.perf_counter() - start
    start = time.perf_counter()
    bench = mc_benchmark(case.loss, model, mc_samples, np.zeros(d), stream.spawn(1))
    mc_time = time.perf_counter() - start
    gap = float(np.max(np.abs(est.m_bar - bench.m_star)))
    ok = (gap <= MNIG_TOL and abs(est.risk - case.target_risk) <= MNIG_TOL
          and abs(bench.risk - case.target_risk) <= MNIG_TOL)
    row = {"loss": case.loss.family.value, "params": " ".join(f"{p:g}" for p in case.loss.params),
           "alpha": case.loss.alpha, "seed": seed, "sa_risk": est.risk}
    row.update({f"sa_m{j + 1}": float(v) for j, v in enumerate(est.m_bar)})
    row.update(_ci_columns("sa_", est.ci))
    row["mc_risk"] = bench.risk
    row.update({f"mc_m{j + 1}": float(v) for j, v in enumerate(bench.m_star)})
    row.update({"mc_converged": bench.converged, "target_risk": case.target_risk, "max_alloc_gap": gap,
                "sa_runtime_s": sa_time, "mc_runtime_s": mc_time, "pass": bool(ok)})
    return row


def reproduce_table(
    table_id: str,
    seed: int = 0,
    n_iter: int | None = None,
    mc_samples: int = 500_000,
    level: float = 0.95,
    threads: int = 1,
) -> TableReport:
    if table_id not in TABLE_IDS:
        raise ConfigError(f"table must be one of {', '.join(TABLE_IDS)}")
    sched = StepSchedule() if n_iter is None else StepSchedule(n_iter=n_iter)
    if table_id in GAUSSIAN_TABLES:
        jobs = [lambda c=c, i=i: _gaussian_row(c, seed + i, sched, level) for i, c in enumerate(gaussian_cases(table_id))]
    else:
        jobs = [lambda c=c, i=i: _mnig_row(c, seed + i, sched, level, mc_samples) for i, c in enumerate(mnig_cases(table_id))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda job: job(), jobs))
    else:
        rows = [job() for job in jobs]
    return TableReport(table_id, seed, rows)
