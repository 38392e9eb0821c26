"""Command-line entry point: ``mnl-ucb {simulate,solve,table1,verify,oracle-check}``.

Exit codes: 0 success, 1 usage or config error, 2 invariant-suite failure.
"""
import argparse
import json
import math
import os
import sys
from dataclasses import fields
from typing import Optional

import numpy as np

from . import assortment, verify
from .estimation import MleConfig
from .policy import SOLVERS, BaselineConfig, UcbConfig, default_hyperparams
from .sim import (InstanceConfig, PolicySpec, greedy_quality_experiment, harvest_subproblem, run_replications,
                  write_aggregate_csv, write_trace_csv, write_trace_metadata)

OUTPUT_DIR_ENV = "MNL_UCB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "mnl_ucb_output"

EXIT_OK, EXIT_CONFIG, EXIT_SUITE = 0, 1, 2


class ConfigError(Exception):
    pass


def fmt(v) -> str:
    return format(float(v), ".9g")


def _say(msg: str = "") -> None:
    print(msg, flush=True)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# run-config documents

INSTANCE_KEYS = {"N": int, "K": int, "d": int, "T": int, "feature_mode": str, "revenue_range": list,
                 "utility_cap": float, "adversarial_epsilon": float, "adversarial_index": int}
POLICY_KEYS = {"policy": str, "mode": str, "t0": int, "tau": float, "omega": float, "solver": str,
               "ridge": float, "refresh_every": int, "greedy_restarts": int, "epsilon0": float, "alpha": float,
               "n_directions": int, "mle_max_iterations": int, "mle_gradient_tolerance": float,
               "baseline_width_scale": float, "baseline_bonus_scale": float}
RUN_KEYS = {"reps": int, "parallelism": int, "master_seed": int, "output_dir": str}
ALL_KEYS = {**INSTANCE_KEYS, **POLICY_KEYS, **RUN_KEYS}
REQUIRED = ("N", "K", "d", "T")
NULL_MEANS_INF = ("tau",)  # "tau": null leaves the local MLE unconstrained


def _key_line(text: str, key: str) -> int:
    needle = f'"{key}"'
    pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else 1


def _coerce(key, value, kind, line):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"line {line}: field {key!r} must be an integer, got {value!r}")
        return int(value)
    if kind is float:
        if value is None and key in NULL_MEANS_INF:
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"line {line}: field {key!r} must be a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"line {line}: field {key!r} must be a string, got {value!r}")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"line {line}: field {key!r} must be a list, got {value!r}")
    return value


def parse_run_config(text: str, overrides: Optional[dict] = None) -> dict:
    """Validate a JSON run document; errors carry the offending line number."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError("line 1: the config must be a JSON object")
    doc.update(overrides or {})
    out = {}
    for key, value in doc.items():
        line = _key_line(text, key)
        if key not in ALL_KEYS:
            raise ConfigError(f"line {line}: unknown field {key!r}")
        out[key] = _coerce(key, value, ALL_KEYS[key], line)
    for key in REQUIRED:
        if key not in out:
            raise ConfigError(f"line 1: missing required field {key!r}")
    return out


def _parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        return key.strip(), json.loads(raw)
    except json.JSONDecodeError:
        return key.strip(), raw


def build_run(cfg: dict, text: str = ""):
    """(InstanceConfig, PolicySpec) from a validated document."""
    inst = {k: cfg[k] for k in INSTANCE_KEYS if k in cfg}
    if inst["K"] > inst["N"]:
        _warn(f"K={inst['K']} exceeds N={inst['N']}; using K={inst['N']}")
        inst["K"] = inst["N"]
    try:
        config = InstanceConfig(**inst, seed=cfg.get("master_seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"line {_first_line(text, inst)}: {exc}") from None
    kind = cfg.get("policy", "mle-ucb")
    try:
        spec = PolicySpec(kind=kind, mode=cfg.get("mode", "experiment"),
                          ucb=_ucb_config(cfg, config) if kind == "mle-ucb" else None,
                          baseline=BaselineConfig(cfg.get("baseline_width_scale", 48.0),
                                                  cfg.get("baseline_bonus_scale", 48.0), config.utility_cap))
        spec.build(config)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"line {_first_line(text, POLICY_KEYS)}: {exc}") from None
    return config, spec


def _first_line(text, keys):
    lines = [_key_line(text, k) for k in keys if f'"{k}"' in text]
    return min(lines) if lines else 1


def _ucb_config(cfg: dict, config: InstanceConfig) -> UcbConfig:
    base = default_hyperparams(max(config.T, 4), config.d, config.K, cfg.get("mode", "experiment"))
    mle = MleConfig(max_iterations=cfg.get("mle_max_iterations", 200),
                    gradient_tolerance=cfg.get("mle_gradient_tolerance", 1e-8),
                    ridge=cfg.get("ridge", 1e-6))
    names = {f.name for f in fields(UcbConfig)} - {"mle"}
    kw = {n: cfg[n] for n in names if n in cfg}
    merged = {n: getattr(base, n) for n in names}
    merged.update(kw)
    return UcbConfig(mle=mle, **merged)


# ---------------------------------------------------------------------------
# commands


def output_dir(arg: Optional[str], cfg: Optional[dict] = None) -> str:
    if arg:
        return arg
    if cfg and cfg.get("output_dir"):
        return cfg["output_dir"]
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    overrides = dict(_parse_override(o) for o in args.set or [])
    for name in ("reps", "parallelism", "master_seed"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    cfg = parse_run_config(text, overrides)
    config, spec = build_run(cfg, text)
    reps = cfg.get("reps", 1)
    if reps < 1:
        raise ConfigError(f"line {_key_line(text, 'reps')}: reps must be >= 1")
    out = output_dir(args.output_dir, cfg)
    os.makedirs(out, exist_ok=True)
    agg = run_replications(config, spec, reps, cfg.get("parallelism", 1), cfg.get("master_seed", 0))
    for i, trace in enumerate(agg.traces):
        stem = os.path.join(out, f"episode_{i:03d}")
        write_trace_csv(stem + ".csv", trace)
        write_trace_metadata(stem + ".json", trace, {"episode": i, "master_seed": cfg.get("master_seed", 0)})
    write_aggregate_csv(os.path.join(out, "aggregate.csv"), agg)
    label = spec.kind
    ucb = spec.ucb_config(config) if spec.kind == "mle-ucb" else None
    if ucb is not None and ucb.refresh_every != 1:
        label += f" (local MLE refreshed every {ucb.refresh_every} periods)"
    _say(f"policy: {label}")
    _say(f"episodes: {reps}  horizon: {config.T}  output: {out}")
    _say(f"mean cumulative regret at T={config.T}: {fmt(agg.mean[-1])}")
    _say(f"mean average regret at T={config.T}: {fmt(agg.mean[-1] / config.T)}")
    return EXIT_OK


def _load_subproblem(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read subproblem: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError("line 1: the subproblem must be a JSON object")
    known = {"N", "K", "d", "omega", "utilities", "revenues", "x"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"line {_key_line(text, key)}: unknown field {key!r}")
    for key in ("K", "utilities", "revenues", "x"):
        if key not in doc:
            raise ConfigError(f"line 1: missing required field {key!r}")
    return doc, text


def cmd_solve(args) -> int:
    doc, text = _load_subproblem(args.subproblem)
    if args.omega is not None:
        doc["omega"] = args.omega
    n = len(doc["utilities"])
    try:
        k = int(doc["K"])
    except (TypeError, ValueError):
        raise ConfigError(f"line {_key_line(text, 'K')}: K must be an integer") from None
    if k < 0:
        raise ConfigError(f"line {_key_line(text, 'K')}: infeasible capacity K={k}")
    if k > n:
        _warn(f"K={k} exceeds N={n}; using K={n}")
        doc["K"] = n
    try:
        sub = assortment.Subproblem.from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid subproblem: {exc}") from None
    rng = np.random.default_rng(args.seed)
    try:
        if args.solver == "brute":
            rep = assortment.brute_force(sub, cap=args.cap)
        elif args.solver == "greedy":
            rep = assortment.greedy_swap(sub, rng, restarts=args.restarts)
        elif args.solver == "dp_univariate":
            rep = assortment.approx_univariate(sub, args.epsilon0)
        else:
            alpha = args.alpha if args.alpha is not None else math.sqrt(sub.dim)
            rep = assortment.approx_multivariate(sub, alpha, args.epsilon0, args.directions, rng)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _say(f"solver: {rep.solver}")
    _say("assortment: " + " ".join(str(i) for i in rep.assortment))
    _say(f"estr: {fmt(rep.estr)}")
    _say(f"ci: {fmt(rep.ci)}")
    _say(f"objective: {fmt(rep.objective)}")
    return EXIT_OK


def cmd_table1(args) -> int:
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    table = greedy_quality_experiment(args.horizons, args.instances, args.seed, args.N, args.K, args.d,
                                      restarts=args.restarts)
    lines = [",".join(table.header())]
    for T in table.horizons:
        row = table.row(T)
        lines.append(",".join([str(T)] + [fmt(row[h]) for h in table.header()[1:-1]] + [str(row["n"])]))
    for line in lines:
        _say(line)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        names = verify.resolve(args.suites)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    results = verify.run_suites(names, seed=args.seed, report=_say)
    failed = [r.name for r in results if not r.passed]
    for r in results:
        _say(f"suite {r.name}: {'PASS' if r.passed else 'FAIL'}")
    if failed:
        _say("failing suites: " + ", ".join(failed))
        return EXIT_SUITE
    _say(f"all {len(results)} suites passed")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    """Greedy versus enumeration on subproblems harvested along MLE-UCB runs."""
    with open(args.config) as fh:
        text = fh.read()
    cfg = parse_run_config(text, dict(_parse_override(o) for o in args.set or []))
    config, spec = build_run(cfg, text)
    if spec.kind != "mle-ucb":
        raise ConfigError("oracle-check needs policy 'mle-ucb'")
    t0 = spec.ucb_config(config).t0
    horizons = [t for t in range(t0 + 1, config.T + 1, max(1, args.every))]
    seeds = np.random.SeedSequence(cfg.get("master_seed", 0)).spawn(len(horizons))
    gaps = []
    oracle_bad = 0
    for T, ss in zip(horizons, seeds):
        c = InstanceConfig(**{**{f.name: getattr(config, f.name) for f in fields(InstanceConfig)}, "T": T})
        sub, rng = harvest_subproblem(c, spec, ss)
        best = assortment.brute_force(sub, cap=args.cap)
        got = assortment.greedy_swap(sub, rng)
        gaps.append(max(0.0, best.objective - got.objective) / best.objective if best.objective > 0 else 0.0)
        flat = assortment.Subproblem(sub.utilities, sub.revenues, sub.x, sub.capacity, 0.0)
        exact = assortment.brute_force(flat, cap=args.cap).objective
        items, _, _ = assortment.best_revenue_assortment(sub.utilities, sub.revenues, sub.capacity)
        oracle_bad += abs(assortment.estr(flat, items) - exact) > 1e-9
    gaps = np.array(gaps)
    _say(f"subproblems: {gaps.size}")
    _say(f"greedy exact: {int(np.sum(gaps <= 1e-12))}")
    _say(f"mean relative gap: {fmt(gaps.mean() if gaps.size else 0.0)}")
    _say(f"max relative gap: {fmt(gaps.max() if gaps.size else 0.0)}")
    _say(f"revenue oracle mismatches: {oracle_bad}")
    return EXIT_SUITE if oracle_bad else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mnl-ucb", description="Dynamic assortment optimization under contextual MNL.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run replicated episodes and write traces")
    s.add_argument("config", help="JSON run document")
    s.add_argument("--output-dir", help=f"overrides the document and ${OUTPUT_DIR_ENV}")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    s.add_argument("--reps", type=int)
    s.add_argument("--parallelism", type=int)
    s.add_argument("--master-seed", dest="master_seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="solve one subproblem document")
    s.add_argument("subproblem", help="JSON subproblem document")
    s.add_argument("--solver", choices=SOLVERS, default="brute")
    s.add_argument("--omega", type=float)
    s.add_argument("--epsilon0", type=float, default=0.01)
    s.add_argument("--alpha", type=float)
    s.add_argument("--directions", type=int, default=16)
    s.add_argument("--restarts", type=int, default=1)
    s.add_argument("--cap", type=int, default=10**6, help="enumeration cap for brute force")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("table1", help="greedy-versus-enumeration quality table")
    s.add_argument("--horizons", type=int, nargs="+", default=[50, 200, 800])
    s.add_argument("--instances", type=int, default=200)
    s.add_argument("--N", type=int, default=10)
    s.add_argument("--K", type=int, default=4)
    s.add_argument("--d", type=int, default=5)
    s.add_argument("--restarts", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", help="also write the table to this file")
    s.set_defaults(func=cmd_table1)

    s = sub.add_parser("verify", help="run invariant suites")
    s.add_argument("suites", nargs="*", default=["all"],
                   help="suite names or groups: " + ", ".join(list(verify.SUITES) + list(verify.GROUPS)))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("oracle-check", help="audit greedy against enumeration along a run")
    s.add_argument("config", help="JSON run document (small N)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--every", type=int, default=10, help="harvest every this many periods")
    s.add_argument("--cap", type=int, default=10**6)
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
