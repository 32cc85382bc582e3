"""Seeded Monte Carlo studies over registered scenarios."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core.data import InequalityParams
from ..core.quadrature import PriceGrid
from ..errors import DomainError, SurplusError
from ..estimators import (BEHAVIOR, cross_fit, estimate_acpw, estimate_cpw, estimate_dm,
                          estimate_ia, estimate_ia_dm)
from ..inference import confidence_interval
from ..nuisance.folds import make_folds
from ..partial_id import OverlapMap, estimate_bounds
from .scenarios import Scenario, get_scenario, make_world, oracle_surplus

POINT_ESTIMATORS = ("DM", "CPW", "ACPW", "IA-DM", "IA-ACPW")
BOUND_ESTIMATORS = ("LC-bounds", "naive-bounds", "oracle-bounds")
RECORD_COLUMNS = ("scenario", "estimator", "mode", "n", "rep", "estimate", "truth", "error",
                  "variance", "ci_low", "ci_high", "ci_hit")


@dataclass(frozen=True)
class StudyRecord:
    """One estimate in one replication.

    For bound estimators ``ci_low``/``ci_high`` hold the bounds, ``estimate``
    their midpoint and ``ci_hit`` whether the truth lies inside.
    """

    scenario: str
    estimator: str
    mode: str
    n: int
    rep: int
    estimate: float
    truth: float
    variance: float | None
    ci_low: float | None
    ci_high: float | None

    @property
    def error(self) -> float:
        return self.estimate - self.truth

    @property
    def ci_hit(self) -> bool | None:
        if self.ci_low is None:
            return None
        return bool(self.ci_low <= self.truth <= self.ci_high)

    def row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            if isinstance(v, float):
                return repr(v)
            return str(v)

        vals = (self.scenario, self.estimator, self.mode, self.n, self.rep, self.estimate,
                self.truth, self.error, self.variance, self.ci_low, self.ci_high, self.ci_hit)
        return [fmt(v) for v in vals]


@dataclass
class RunReport:
    scenario: str
    records: list
    seeds: dict
    config: dict
    wall_clock: float = 0.0
    rep_seconds: list = field(default_factory=list)

    def select(self, estimator=None, mode=None, n=None) -> list:
        return [r for r in self.records
                if (estimator is None or r.estimator == estimator)
                and (mode is None or r.mode == mode)
                and (n is None or r.n == n)]

    def errors(self, estimator, mode, n) -> np.ndarray:
        return np.array([r.error for r in self.select(estimator, mode, n)])

    def summary(self) -> list[dict]:
        """Aggregates per (estimator, mode, n), in first-seen order.

        ``variance`` is the spread of the errors (divisor ``reps``), which is
        the spread of the estimates when the truth is fixed across
        replications; either way ``mse = bias**2 + variance``.
        """
        keys = []
        for r in self.records:
            k = (r.estimator, r.mode, r.n)
            if k not in keys:
                keys.append(k)
        rows = []
        for est, mode, n in keys:
            recs = sorted(self.select(est, mode, n), key=lambda r: r.rep)
            err = np.array([r.error for r in recs])
            hits = [r.ci_hit for r in recs if r.ci_hit is not None]
            widths = [r.ci_high - r.ci_low for r in recs if r.ci_low is not None]
            bias = math.fsum(err.tolist()) / err.size
            rows.append({
                "estimator": est, "mode": mode, "n": n, "reps": len(recs),
                "mse": math.fsum((err * err).tolist()) / err.size,
                "bias": bias,
                "variance": math.fsum(((err - bias) ** 2).tolist()) / err.size,
                "mean_ci_width": math.fsum(widths) / len(widths) if widths else None,
                "coverage": sum(hits) / len(hits) if hits else None,
            })
        return rows

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_COLUMNS)
            for r in self.records:
                w.writerow(r.row())

    def write_summary_csv(self, path) -> None:
        cols = ["scenario", "estimator", "mode", "n", "reps", "mse", "bias", "variance",
                "mean_ci_width", "coverage"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.summary():
                w.writerow([self.scenario] + ["" if row[c] is None else
                                              (repr(row[c]) if isinstance(row[c], float)
                                               else row[c]) for c in cols[1:]])

    def to_dict(self, timing: bool = True) -> dict:
        out = {"scenario": self.scenario, "config": self.config, "seeds": self.seeds,
               "summary": self.summary()}
        if timing:
            out["wall_clock_seconds"] = self.wall_clock
        return out

    def write_json(self, path, timing: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _seed(master_seed, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


def _ci(est, alpha, variance_scale):
    if est.variance is None:
        return None, None, None
    var = est.variance * variance_scale
    ci = confidence_interval(est.value, var, est.n, alpha)
    return var, ci.low, ci.high


def _point_rep(sc: Scenario, world, rep, data, estimators, modes, alpha, variance_scale,
               truths, master_seed):
    grid = PriceGrid.for_support(data.price_support, sc.grid_size)
    dl, pl = sc.demand_learner(), sc.propensity_learner()
    need_full = any(e in estimators for e in ("DM", "CPW", "IA-DM"))
    need_cross = any(e in estimators for e in ("ACPW", "IA-ACPW"))
    demand = dl.fit(data) if need_full else None
    prop = pl.fit(data) if need_full else None
    cf = None
    if need_cross:
        fold_seed = int(_seed(master_seed, rep, data.n, 1).generate_state(1)[0])
        folds = make_folds(data.n, 2, fold_seed)
        cf = cross_fit(data, dl, pl, folds)
    params = InequalityParams(sc.r)
    out = []
    for mode in modes:
        policy = BEHAVIOR if mode == "behavior" else world.target
        for name in estimators:
            if name == "DM":
                est = estimate_dm(data, demand, policy, grid, propensity=prop)
            elif name == "CPW":
                est = estimate_cpw(data, prop, policy, grid, demand=demand)
            elif name == "ACPW":
                est = estimate_acpw(data, None, None, policy, grid=grid, crossfit=cf)
            elif name == "IA-DM":
                est = estimate_ia_dm(data, demand, prop, policy, params, grid)
            elif name == "IA-ACPW":
                est = estimate_ia(data, None, None, policy, params=params, grid=grid,
                                  crossfit=cf)
            else:
                raise DomainError(f"unknown estimator {name!r}")
            r = sc.r if name.startswith("IA") else 1.0
            var, lo, hi = _ci(est, alpha, variance_scale)
            out.append(StudyRecord(sc.name, name, mode, data.n, rep, float(est.value),
                                   truths[(mode, r)], var, lo, hi))
    return out


def _bounds_rep(sc: Scenario, world, rep, data, estimators, truth):
    # fine cells over the logged range, coarse ones from there up to v_max
    v_max = world.v_max
    lo = min(data.price_support[0], world.target.support()[0])
    top = data.price_support[1]
    grid = PriceGrid(np.union1d(np.linspace(lo, top, sc.grid_size),
                                np.linspace(top, v_max, sc.grid_size)))
    overlap = OverlapMap.from_prices(data.prices, v_max, support=sc.price_intervals)
    out = []
    lc = None
    if {"LC-bounds", "naive-bounds"} & set(estimators):
        demand = sc.demand_learner().fit(data)
        lc = estimate_bounds(data, demand, world.target, overlap, grid)
    for name in estimators:
        if name == "LC-bounds":
            lo_b, hi_b = lc.lower, lc.upper
        elif name == "naive-bounds":
            lo_b, hi_b = lc.naive_lower, lc.naive_upper
        elif name == "oracle-bounds":
            b = estimate_bounds(data, world.true_demand(), world.target, overlap, grid)
            lo_b, hi_b = b.lower, b.upper
        else:
            raise DomainError(f"unknown bound estimator {name!r}")
        out.append(StudyRecord(sc.name, name, "target", data.n, rep, 0.5 * (lo_b + hi_b), truth,
                               None, float(lo_b), float(hi_b)))
    return out


def _run_rep(args):
    sc, rep, n_grid, estimators, modes, alpha, variance_scale, master_seed = args
    t0 = time.perf_counter()
    world = make_world(sc, np.random.default_rng(_seed(master_seed, rep)))
    records = []
    try:
        if sc.study == "bounds":
            truth = oracle_surplus(world, world.target, 1.0, p_max=world.v_max).value
            for n in n_grid:
                data, _ = world.sample(n, np.random.default_rng(_seed(master_seed, rep, n)))
                records += _bounds_rep(sc, world, rep, data, estimators, truth)
        else:
            truths = {}
            for mode in modes:
                policy = world.logging if mode == "behavior" else world.target
                for r in {1.0, float(sc.r)}:
                    truths[(mode, r)] = oracle_surplus(world, policy, r,
                                                       rng_seed=_seed(master_seed, rep, 0, 2)
                                                       ).value
            for n in n_grid:
                data, _ = world.sample(n, np.random.default_rng(_seed(master_seed, rep, n)))
                records += _point_rep(sc, world, rep, data, estimators, modes, alpha,
                                      variance_scale, truths, master_seed)
    except SurplusError as exc:
        raise type(exc)(f"replication {rep}: {exc}") from exc
    return records, time.perf_counter() - t0


def run_study(scenario, estimators=None, n_grid=None, reps=None, alpha=None, master_seed=0,
              modes=("target", "behavior"), variance_scale: float = 1.0,
              n_jobs: int = 1) -> RunReport:
    """Run ``reps`` seeded replications of a scenario over ``n_grid``.

    Replication ``k`` draws its world from ``SeedSequence(master_seed,
    spawn_key=(k,))`` and its sample of size ``n`` from spawn key ``(k, n)``,
    so results do not depend on ``n_jobs`` or on which other sizes are run.
    Any failure aborts the study with the replication id attached.
    """
    sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
    bounds = sc.study == "bounds"
    estimators = tuple(estimators or sc.estimators)
    allowed = BOUND_ESTIMATORS if bounds else POINT_ESTIMATORS
    bad = [e for e in estimators if e not in allowed]
    if bad:
        raise DomainError(f"estimators {bad} do not apply to scenario {sc.name!r}; "
                          f"choose from {list(allowed)}")
    n_grid = tuple(int(n) for n in (n_grid or sc.n_grid))
    reps = int(sc.reps if reps is None else reps)
    alpha = float(sc.alpha if alpha is None else alpha)
    modes = ("target",) if bounds else tuple(modes)
    if reps < 1 or any(n < 10 for n in n_grid):
        raise DomainError("need reps >= 1 and every n >= 10")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if any(m not in ("target", "behavior") for m in modes):
        raise DomainError(f"modes must be 'target' or 'behavior', got {modes}")
    master_seed = int(master_seed)
    t0 = time.perf_counter()
    jobs = [(sc, k, n_grid, estimators, modes, alpha, variance_scale, master_seed)
            for k in range(reps)]
    if n_jobs == 1:
        results = [_run_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=None if n_jobs < 1 else n_jobs) as pool:
            results = list(pool.map(_run_rep, jobs))
    records, secs = [], []
    for recs, s in results:  # already in replication order
        records += recs
        secs.append(s)
    config = {"scenario": sc.name, "estimators": list(estimators), "n_grid": list(n_grid),
              "reps": reps, "alpha": alpha, "seed": master_seed, "modes": list(modes),
              "variance_scale": variance_scale, "r": sc.r, "demand": sc.demand,
              "propensity": sc.propensity}
    seeds = {"master": master_seed, "world_spawn_key": "(rep,)", "data_spawn_key": "(rep, n)"}
    return RunReport(sc.name, records, seeds, config, time.perf_counter() - t0, secs)


def scenario_dict(sc: Scenario) -> dict:
    d = asdict(sc)
    d["target"] = list(d["target"]) if isinstance(d["target"], tuple) else d["target"]
    return d
