"""Command-line front end: ``surplus-ope {estimate,simulate,bounds,gen-synth}``.

Settings resolve as command-line flag, then ``--config`` file (JSON or YAML,
keys spelled like the flags with underscores), then built-in default. The
seed falls back to ``SURPLUS_OPE_SEED`` and finally to 0. Every JSON report
embeds the effective configuration under ``"config"``, and such a report is
itself accepted by ``--config``.

Exit codes: 0 success, 2 bad input or configuration, 3 degenerate data.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core.data import InequalityParams, ObservationSet, load_csv, write_csv
from .core.policies import DiscreteGrid, PiecewiseUniform, SoftmaxRevenue, UniformInterval
from .core.quadrature import PriceGrid
from .errors import DegenerateDataError, DomainError, SchemaError, SurplusError
from .estimators import (BEHAVIOR, cross_fit, estimate_acpw, estimate_cpw, estimate_delta,
                         estimate_dm, estimate_ia, estimate_ia_dm)
from .nuisance import (BinnedKDELearner, BoostedLearner, FixedPropensity, GaussianLearner,
                       KDELearner, KnownPropensity, LinearLearner, make_folds)
from .partial_id import OverlapMap, estimate_bounds

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 2, 3
SEED_ENV = "SURPLUS_OPE_SEED"

ESTIMATE_DEFAULTS = {
    "data": None, "estimator": "ACPW", "mode": "target", "policy": None, "r": None,
    "folds": 2, "alpha": 0.05, "grid_size": 200, "clip": 1e-3, "p_max": None,
    "demand": "linear", "propensity": "kde", "known_logging": None, "segment_column": None,
    "seed": None, "output": None,
}
SIMULATE_DEFAULTS = {
    "scenario": None, "reps": None, "n": None, "estimators": None, "alpha": None,
    "modes": "target,behavior", "seed": None, "output": None, "n_jobs": 1,
}
BOUNDS_DEFAULTS = {
    "data": None, "policy": None, "v_max": None, "grid_size": 200, "demand": "linear",
    "support": None, "monotone_lower": False, "seed": None, "output": None,
}
GEN_DEFAULTS = {"n": 1000, "d": 6, "seed": None, "output": None}


class ConfigError(SurplusError):
    """Bad configuration file or flag combination."""


# ---------------------------------------------------------------- config


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a key-value mapping")
    if isinstance(doc.get("config"), dict):  # a previous report
        doc = doc["config"]
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _resolve(args, defaults: dict) -> dict:
    cfg = _load_config(args.config)
    unknown = sorted(set(cfg) - set(defaults) - {"command"})
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown}; allowed: {sorted(defaults)}")
    out = dict(defaults)
    out.update({k: v for k, v in cfg.items() if k in defaults})
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            out[k] = v
    if out.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            out["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    out["seed"] = int(out["seed"])
    return out


def _need(cfg, key):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


# ---------------------------------------------------------------- parsing helpers


def _floats(text, what):
    try:
        return [float(t) for t in str(text).split(",") if t != ""]
    except ValueError:
        raise ConfigError(f"cannot parse {what} from {text!r}") from None


def parse_logging(spec: str) -> PiecewiseUniform:
    """``uniform:a:b`` or ``piecewise:a:b,c:d`` (uniform on a union)."""
    kind, _, rest = str(spec).partition(":")
    if kind == "uniform":
        a, b = _floats(rest.replace(":", ","), "uniform bounds")
        return UniformInterval(a, b)
    if kind == "piecewise":
        ivs = [_floats(part.replace(":", ","), "interval") for part in rest.split(",")
               if part]
        return PiecewiseUniform(ivs)
    raise ConfigError(f"unknown price-law spec {spec!r}; use uniform:a:b or piecewise:a:b,c:d")


def parse_policy(spec: str, data: ObservationSet | None = None, seed: int = 0):
    """Target policy from a short string.

    ``uniform:a:b``; ``piecewise:a:b,c:d``; ``grid:p1,p2,...[:q1,q2,...]``
    for fixed masses; ``softmax:p1,p2,...[:gamma]`` or ``softmax:k[:gamma]``
    for ``k`` equispaced points over the logged price range, with revenue
    computed from boosted trees fit on ``data``.
    """
    kind, _, rest = str(spec).partition(":")
    if kind in ("uniform", "piecewise"):
        return parse_logging(spec)
    if kind == "grid":
        pts, _, probs = rest.partition(":")
        points = _floats(pts, "grid points")
        return DiscreteGrid(points, _floats(probs, "grid masses") if probs else None)
    if kind == "softmax":
        if data is None:
            raise ConfigError("a softmax policy needs data to fit demand on")
        pts, _, gamma = rest.partition(":")
        vals = _floats(pts, "softmax points")
        if len(vals) == 1 and vals[0] == int(vals[0]) and vals[0] >= 2:
            points = np.linspace(data.prices.min(), data.prices.max(), int(vals[0]))
        else:
            points = vals
        model = BoostedLearner(rng_seed=seed).fit(data)
        return SoftmaxRevenue(model, points, float(gamma) if gamma else 1.0)
    raise ConfigError(f"unknown policy spec {spec!r}")


def _demand_learner(name, seed):
    if name == "linear":
        return LinearLearner()
    if name == "boosted":
        return BoostedLearner(rng_seed=seed)
    raise ConfigError(f"unknown demand learner {name!r}; use linear or boosted")


def _propensity_learner(name, clip, known):
    if known is not None:
        return FixedPropensity(KnownPropensity(policy=known, clip_floor=clip))
    if name == "kde":
        return KDELearner("tophat", clip_floor=clip)
    if name == "gaussian":
        return GaussianLearner(clip_floor=clip)
    if name == "binned":
        return BinnedKDELearner(clip_floor=clip)
    raise ConfigError(f"unknown propensity learner {name!r}; use kde, gaussian or binned")


def _write_json(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


# ---------------------------------------------------------------- estimate


def _price_window(data, policy, known, p_max):
    """Integration window: covers the data and both laws, up to ``p_max`` if given."""
    laws = [law.support() for law in (policy, known) if law is not None]
    lo = min([float(data.prices.min())] + [a for a, _ in laws])
    if p_max is not None:
        return lo, float(p_max)
    return lo, max([float(data.price_support[1])] + [b for _, b in laws])


def _estimate_one(data, cfg, policy, known, seed):
    est = cfg["estimator"]
    mode = cfg["mode"]
    clip = float(cfg["clip"])
    dl = _demand_learner(cfg["demand"], seed)
    pl = _propensity_learner(cfg["propensity"], clip, known)
    grid = PriceGrid.for_support(data.price_support, int(cfg["grid_size"]))
    ia = est.startswith("IA")
    r = float(cfg["r"]) if cfg["r"] is not None else (0.5 if ia else 1.0)
    if r != 1.0 and not ia:
        raise ConfigError(f"r={r} needs an inequality-aware estimator (IA-DM or IA-ACPW)")
    params = InequalityParams(r)
    modes = ["target", "behavior", "delta"] if mode == "all" else [mode]
    if any(m in ("target", "delta") for m in modes) and policy is None:
        raise ConfigError("target and delta modes need --policy")
    out = {}

    if est in ("ACPW", "IA-ACPW"):
        folds = make_folds(data.n, int(cfg["folds"]), seed)
        cf = cross_fit(data, dl, pl, folds)

        def run(pol):
            if est == "ACPW":
                return estimate_acpw(data, None, None, pol, grid=grid, crossfit=cf)
            return estimate_ia(data, None, None, pol, params=params, grid=grid, crossfit=cf)
    elif est in ("DM", "CPW", "IA-DM"):
        demand = prop = None
        try:
            demand = dl.fit(data)
        except DegenerateDataError:
            if est != "CPW":
                raise
        prop = pl.fit(data)

        def run(pol):
            if est == "DM":
                return estimate_dm(data, demand, pol, grid, propensity=prop)
            if est == "CPW":  # demand only feeds the variance
                return estimate_cpw(data, prop, pol, grid, demand=demand)
            return estimate_ia_dm(data, demand, prop, pol, params, grid)
    else:
        raise ConfigError(f"unknown estimator {est!r}; use DM, CPW, ACPW, IA-DM or IA-ACPW")

    cache = {}
    for m in modes:
        if m in ("target", "delta") and "target" not in cache:
            cache["target"] = run(policy)
        if m in ("behavior", "delta") and "behavior" not in cache:
            cache["behavior"] = run(BEHAVIOR)
        if m == "delta":
            cache["delta"] = estimate_delta(cache["target"], cache["behavior"])
        if m not in ("target", "behavior", "delta"):
            raise ConfigError(f"unknown mode {m!r}; use target, behavior, delta or all")
        out[m] = cache[m]
    return out


def cmd_estimate(cfg) -> int:
    alpha = _check_alpha(cfg["alpha"])
    if float(cfg["clip"]) <= 0:
        raise DomainError("clip floor must be positive")
    known = parse_logging(cfg["known_logging"]) if cfg["known_logging"] else None
    data, extra = load_csv(_need(cfg, "data"))
    seed = cfg["seed"]
    policy = parse_policy(cfg["policy"], data, seed) if cfg["policy"] else None
    lo, hi = _price_window(data, policy, known, cfg["p_max"])
    data = ObservationSet(data.features, data.prices, data.outcomes, (lo, hi))
    groups = [("all", np.arange(data.n))]
    seg = cfg["segment_column"]
    if seg:
        if seg not in extra:
            raise SchemaError(f"segment column {seg!r} not found; available: {sorted(extra)}")
        labels = np.asarray(extra[seg])
        groups = [(g, np.flatnonzero(labels == g)) for g in sorted(set(labels.tolist()))]
    results = []
    for name, idx in groups:
        sub = data.subset(idx)
        try:
            ests = _estimate_one(sub, cfg, policy, known, seed)
        except DegenerateDataError as exc:
            raise DegenerateDataError(f"segment {name!r}: {exc}") from exc
        for mode, e in ests.items():
            results.append({"segment": name, **e.to_dict(alpha)})
    _write_json({"command": "estimate", "version": __version__, "config": cfg,
                 "estimates": results}, cfg["output"])
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg, list_only=False) -> int:
    from .simbench import get_scenario, list_scenarios, run_study

    if list_only:
        for name in list_scenarios():
            sys.stdout.write(f"{name}\t{get_scenario(name).description}\n")
        return EXIT_OK
    sc = get_scenario(_need(cfg, "scenario"))
    n_grid = None
    if cfg["n"] is not None:
        n_grid = [int(v) for v in _floats(cfg["n"], "sample sizes")] \
            if isinstance(cfg["n"], str) else [int(v) for v in np.atleast_1d(cfg["n"])]
    est = cfg["estimators"]
    if isinstance(est, str):
        est = [e for e in est.split(",") if e]
    modes = cfg["modes"]
    if isinstance(modes, str):
        modes = [m for m in modes.split(",") if m]
    alpha = None if cfg["alpha"] is None else _check_alpha(cfg["alpha"])
    report = run_study(sc, est, n_grid, cfg["reps"], alpha, cfg["seed"], modes=tuple(modes),
                       n_jobs=int(cfg["n_jobs"]))
    out = cfg["output"]
    if out:
        base = Path(out)
        stem = base.with_suffix("") if base.suffix == ".csv" else base
        report.write_csv(stem.with_suffix(".csv"))
        report.write_summary_csv(stem.parent / (stem.name + "_summary.csv"))
        doc = report.to_dict()
        doc["config"] = cfg
        doc["study"] = report.config
        _write_json(doc, stem.with_suffix(".json"))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        from .simbench.runner import RECORD_COLUMNS

        w.writerow(RECORD_COLUMNS)
        for r in report.records:
            w.writerow(r.row())
    return EXIT_OK


# ---------------------------------------------------------------- bounds


def _parse_support(spec):
    if spec is None:
        return None
    if isinstance(spec, (list, tuple)):
        return spec
    return [_floats(part.replace(":", ","), "support interval")
            for part in str(spec).split(",") if part]


def cmd_bounds(cfg) -> int:
    data, _ = load_csv(_need(cfg, "data"))
    seed = cfg["seed"]
    policy = parse_policy(_need(cfg, "policy"), data, seed)
    try:
        support = _parse_support(cfg["support"])
        overlap = OverlapMap.from_prices(data.prices, cfg["v_max"], support=support)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SurplusError):
            raise
        raise ConfigError(f"malformed overlap configuration: {exc}") from None
    demand = _demand_learner(cfg["demand"], seed).fit(data)
    lo = min(float(data.prices.min()), policy.support()[0])
    grid = PriceGrid.uniform(lo, overlap.v_max, int(cfg["grid_size"]))
    b = estimate_bounds(data, demand, policy, overlap, grid,
                        monotone_lower=bool(cfg["monotone_lower"]))
    _write_json({"command": "bounds", "version": __version__, "config": cfg, "bounds": b.to_dict()},
                cfg["output"])
    return EXIT_OK


# ---------------------------------------------------------------- gen-synth

BLUE_SHARE = 0.45
PRICE_CAP = 7.5  # thousands of dollars


def npv_price(payment, term, rate, amount):
    """Net present value of ``term`` monthly payments at ``rate`` minus the amount."""
    term = np.asarray(term, dtype=float)
    rate = np.asarray(rate, dtype=float)
    annuity = (1.0 - (1.0 + rate) ** (-term)) / rate
    return payment * annuity - amount


def synth_loans(n: int, d: int, seed: int):
    """Auto-loan-like applications with an NPV price in thousands of dollars.

    Returns ``(data, extra)``: features ``x0..x{d-1}`` (standardised
    continuous fields first, then label-encoded categories), the logged
    price, the take-up outcome and string columns including ``segment``
    (credit tier by state group).
    """
    if n < 1 or d < 1:
        raise DomainError("gen-synth needs n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    fico = np.clip(rng.normal(705, 55, n), 500, 850)
    term = rng.choice([36, 48, 60, 72], n, p=[0.2, 0.3, 0.35, 0.15]).astype(float)
    amount = np.clip(rng.lognormal(np.log(24000), 0.35, n), 5000, 60000)
    libor = rng.uniform(0.0010, 0.0020, n)  # monthly
    competitor = rng.normal(0.055, 0.01, n)
    blue = rng.random(n) < BLUE_SHARE
    car = rng.integers(0, 3, n).astype(float)
    partner = (rng.random(n) < 0.3).astype(float)
    good = fico >= 700
    # lender's historical APR: riskier tiers pay more, plus randomisation
    apr = 0.035 + 0.03 * (~good) + 0.02 * (850 - fico) / 350 + rng.uniform(0.0, 0.03, n)
    m = apr / 12.0
    payment = amount * m / (1.0 - (1.0 + m) ** (-term))
    price = np.clip(npv_price(payment, term, libor, amount) / 1000.0, 0.0, PRICE_CAP)
    # willingness to pay rises with credit quality and with a worse outside option
    wtp = (2.0 + 1.5 * good + 40.0 * (competitor - 0.055) * term / 60.0
           + 0.00004 * (amount - 24000) + rng.logistic(0.0, 0.8, n))
    y = (wtp > price).astype(float)
    cont = [fico, term, amount, libor, competitor]
    cont = [(c - c.mean()) / (c.std() or 1.0) for c in cont]
    cats = [good.astype(float), partner, car, blue.astype(float)]
    cols = (cont + cats)
    while len(cols) < d:
        cols.append(rng.normal(size=n))
    x = np.column_stack(cols[:d])
    seg = np.where(good, "good", "bad").astype(object) + "_" + np.where(blue, "blue", "red")
    extra = {
        "segment": seg.tolist(),
        "fico": [f"{v:.0f}" for v in fico],
        "term": [f"{v:.0f}" for v in term],
        "amount": [f"{v:.2f}" for v in amount],
        "apr": [f"{v:.5f}" for v in apr],
    }
    data = ObservationSet(x, price, y, (0.0, PRICE_CAP))
    return data, extra


def cmd_gen_synth(cfg) -> int:
    data, extra = synth_loans(int(cfg["n"]), int(cfg["d"]), cfg["seed"])
    out = cfg["output"]
    if out:
        write_csv(out, data, extra)
    else:
        write_csv(sys.stdout, data, extra)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="surplus-ope",
                                 description="Consumer-surplus estimates for pricing policies.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML file of settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", "-o", help="output path (stdout when omitted)")

    e = sub.add_parser("estimate", help="estimate surplus from a logged CSV")
    common(e)
    e.add_argument("--data", help="CSV with x0..x{d-1}, p, y columns")
    e.add_argument("--estimator", choices=["DM", "CPW", "ACPW", "IA-DM", "IA-ACPW"])
    e.add_argument("--mode", choices=["target", "behavior", "delta", "all"])
    e.add_argument("--policy", help="uniform:a:b | piecewise:a:b,c:d | grid:p1,p2[:q1,q2] | "
                                    "softmax:p1,p2,..[:gamma] | softmax:k[:gamma]")
    e.add_argument("--r", type=float, help="inequality exponent (IA estimators)")
    e.add_argument("--folds", type=int)
    e.add_argument("--alpha", type=float)
    e.add_argument("--grid-size", dest="grid_size", type=int)
    e.add_argument("--clip", type=float, help="propensity floor")
    e.add_argument("--p-max", dest="p_max", type=float, help="upper price for integrals")
    e.add_argument("--demand", choices=["linear", "boosted"])
    e.add_argument("--propensity", choices=["kde", "gaussian", "binned"])
    e.add_argument("--known-logging", dest="known_logging",
                   help="known logging law, uniform:a:b or piecewise:a:b,c:d")
    e.add_argument("--segment-column", dest="segment_column")

    s = sub.add_parser("simulate", help="run a registered simulation study")
    common(s)
    s.add_argument("--scenario")
    s.add_argument("--list", action="store_true", help="list registered scenarios")
    s.add_argument("--reps", type=int)
    s.add_argument("--n", help="comma-separated sample sizes")
    s.add_argument("--estimators", help="comma-separated estimator names")
    s.add_argument("--alpha", type=float)
    s.add_argument("--modes", help="comma-separated subset of target,behavior")
    s.add_argument("--n-jobs", dest="n_jobs", type=int)

    b = sub.add_parser("bounds", help="partial-identification bounds under price gaps")
    common(b)
    b.add_argument("--data")
    b.add_argument("--policy")
    b.add_argument("--v-max", dest="v_max", type=float)
    b.add_argument("--grid-size", dest="grid_size", type=int)
    b.add_argument("--demand", choices=["linear", "boosted"])
    b.add_argument("--support", help="known logged price intervals a:b,c:d")
    b.add_argument("--monotone-lower", dest="monotone_lower", action="store_true")

    g = sub.add_parser("gen-synth", help="write a synthetic auto-loan-like CSV")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(_resolve(args, ESTIMATE_DEFAULTS))
        if args.command == "simulate":
            if args.list:
                return cmd_simulate({}, list_only=True)
            return cmd_simulate(_resolve(args, SIMULATE_DEFAULTS))
        if args.command == "bounds":
            return cmd_bounds(_resolve(args, BOUNDS_DEFAULTS))
        return cmd_gen_synth(_resolve(args, GEN_DEFAULTS))
    except (SchemaError, DomainError, ConfigError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DegenerateDataError as exc:
        sys.stderr.write(f"degenerate data: {exc}\n")
        return EXIT_DEGENERATE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
