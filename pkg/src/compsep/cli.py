"""Experiment driver.

Usage::

    compsep run CONFIG [--seed-override S] [--max-rounds N] [--out-dir DIR] [--jobs J]
    compsep verify [--seed S]

The config is a YAML mapping (see README for the full schema)::

    problem:
      kind: quadratic        # or: logistic
      d: 20
      m_f: 5
      m_g: 5
      ratio: 4.0
      mu: 0.1
    profile:
      mode: exact            # or: grid
    algorithms:
      - c_aeg
      - name: vrcs
        params: {p: 0.3}
    eps: 1.0e-6
    max_rounds: 100000
    seeds: [0, 1, 2]
    output: results

Exit codes: 0 ok, 1 invalid config, 2 at least one aborted run, 3 internal error.
"""

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .algorithms import ALGORITHMS, run_algorithm, tune
from .errors import CompsepError
from .problems import (
    load_dataset_csv,
    make_logistic_split,
    make_profile,
    make_quadratic_family,
    make_two_gaussian_dataset,
)
from .randomness import RngStream

EXIT_OK, EXIT_INVALID, EXIT_ABORTED, EXIT_INTERNAL = 0, 1, 2, 3

SUMMARY_COLUMNS = ("algorithm", "seed", "status", "rounds_f_to_eps", "rounds_g_to_eps",
                   "total_rounds_to_eps", "comms_f_to_eps", "comms_g_to_eps",
                   "final_rounds_f", "final_rounds_g", "final_grad_norm", "final_subopt")
MEDIAN_COLUMNS = ("algorithm", "runs", "converged", "median_rounds_f_to_eps",
                  "median_rounds_g_to_eps", "median_total_rounds_to_eps")


class ConfigError(CompsepError, ValueError):
    """Invalid experiment configuration; message carries ``file:line`` when known."""


# ---------------------------------------------------------------------------
# config parsing


def _construct(node, lines, path=()):
    # Plain Python values plus a map from key path to 1-based source line.
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = _construct(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return yaml.SafeLoader.construct_object(_LOADER, node)


class _ScalarLoader(yaml.SafeLoader):
    def __init__(self):
        super().__init__("")


_LOADER = _ScalarLoader()


@dataclass
class AlgorithmSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: list
    eps: float = 1e-6
    max_rounds: int = 100_000
    seeds: list = field(default_factory=lambda: [0])
    output: str = "results"
    profile: dict = field(default_factory=lambda: {"mode": "exact"})
    source: str = "<config>"


_QUAD_KEYS = {"kind", "d", "m_f", "m_g", "ratio", "mu", "delta_f", "L", "rank",
              "client_spread", "interpolate", "seed"}
_LOGI_KEYS = {"kind", "csv", "synthetic", "kappa", "m_f", "m_g", "l2", "server_size", "seed"}
_PROFILE_KEYS = {"mode", "mu_hint", "points", "radius", "safety"}
_TOP_KEYS = {"problem", "profile", "algorithms", "eps", "max_rounds", "seeds", "output"}


def _fail(src, lines, path, msg):
    line = lines.get(tuple(path))
    where = f"{src}:{line}" if line is not None else src
    raise ConfigError(f"{where}: {msg}")


def _number(src, lines, path, v, kind=float, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(src, lines, path, f"{'.'.join(map(str, path))} must be a number, got {v!r}")
    if kind is int and float(v) != int(v):
        _fail(src, lines, path, f"{'.'.join(map(str, path))} must be an integer")
    if positive and not v > 0:
        _fail(src, lines, path, f"{'.'.join(map(str, path))} must be positive")
    return kind(v)


def parse_config(text, source="<config>"):
    """Parse and validate a YAML experiment config."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"{source}:{mark.line + 1}: {exc.problem}") from None
    if node is None:
        raise ConfigError(f"{source}: empty config")
    lines = {}
    raw = _construct(node, lines)
    src = source
    if not isinstance(raw, dict):
        _fail(src, lines, (), "top level must be a mapping")
    for k in raw:
        if k not in _TOP_KEYS:
            _fail(src, lines, (k,), f"unknown key {k!r}")
    if "problem" not in raw or not isinstance(raw["problem"], dict):
        _fail(src, lines, (), "missing 'problem' section")
    prob = dict(raw["problem"])
    kind = prob.get("kind")
    if kind not in ("quadratic", "logistic"):
        _fail(src, lines, ("problem",), f"problem.kind must be quadratic or logistic, got {kind!r}")
    allowed = _QUAD_KEYS if kind == "quadratic" else _LOGI_KEYS
    for k in prob:
        if k not in allowed:
            _fail(src, lines, ("problem", k), f"unknown problem key {k!r}")
    required = ("d", "m_f", "m_g", "ratio", "mu") if kind == "quadratic" else ("kappa", "m_f", "m_g", "l2")
    for k in required:
        if k not in prob:
            _fail(src, lines, ("problem",), f"problem.{k} is required")
    for k in ("d", "m_f", "m_g"):
        if k in prob:
            prob[k] = _number(src, lines, ("problem", k), prob[k], int, positive=True)
    if kind == "logistic" and ("csv" in prob) == ("synthetic" in prob):
        _fail(src, lines, ("problem",), "logistic problem needs exactly one of csv / synthetic")
    if kind == "logistic" and "csv" in prob and not os.path.isabs(prob["csv"]):
        prob["csv"] = os.path.join(os.path.dirname(os.path.abspath(source)), prob["csv"]) \
            if source != "<config>" else prob["csv"]

    profile = raw.get("profile", {"mode": "exact"})
    if not isinstance(profile, dict):
        _fail(src, lines, ("profile",), "profile must be a mapping")
    for k in profile:
        if k not in _PROFILE_KEYS:
            _fail(src, lines, ("profile", k), f"unknown profile key {k!r}")
    if profile.get("mode", "exact") not in ("exact", "grid"):
        _fail(src, lines, ("profile", "mode"), "profile.mode must be exact or grid")

    algos_raw = raw.get("algorithms")
    if not isinstance(algos_raw, list) or not algos_raw:
        _fail(src, lines, ("algorithms",) if "algorithms" in raw else (),
              "algorithms must be a non-empty list")
    algos = []
    for i, a in enumerate(algos_raw):
        if isinstance(a, str):
            a = {"name": a}
        if not isinstance(a, dict) or "name" not in a:
            _fail(src, lines, ("algorithms", i), "algorithm entry needs a name")
        extra = set(a) - {"name", "params"}
        if extra:
            _fail(src, lines, ("algorithms", i), f"unknown algorithm keys {sorted(extra)}")
        if a["name"] not in ALGORITHMS:
            _fail(src, lines, ("algorithms", i), f"unknown algorithm {a['name']!r}; "
                                                 f"choose from {', '.join(ALGORITHMS)}")
        params = a.get("params") or {}
        if not isinstance(params, dict):
            _fail(src, lines, ("algorithms", i, "params"), "params must be a mapping")
        algos.append(AlgorithmSpec(a["name"], dict(params)))

    eps = _number(src, lines, ("eps",), raw.get("eps", 1e-6), positive=True)
    max_rounds = _number(src, lines, ("max_rounds",), raw.get("max_rounds", 100_000), int, positive=True)
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds:
        _fail(src, lines, ("seeds",), "seeds must be a non-empty list of integers")
    seeds = [_number(src, lines, ("seeds", i), s, int) for i, s in enumerate(seeds)]
    output = raw.get("output", "results")
    if not isinstance(output, str):
        _fail(src, lines, ("output",), "output must be a path")
    return ExperimentConfig(prob, algos, eps, max_rounds, seeds, output, dict(profile), source)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# running


def build_problem(problem_cfg, seed):
    cfg = dict(problem_cfg)
    kind = cfg.pop("kind")
    seed = cfg.pop("seed", seed)
    if kind == "quadratic":
        return make_quadratic_family(seed=seed, **cfg)
    if "csv" in cfg:
        ds = load_dataset_csv(cfg.pop("csv"))
    else:
        syn = dict(cfg.pop("synthetic"))
        syn.setdefault("seed", seed)
        ds = make_two_gaussian_dataset(**syn)
    return make_logistic_split(ds, seed=seed, **cfg)


def build_profile(problem, profile_cfg, seed):
    cfg = dict(profile_cfg)
    mode = cfg.pop("mode", "exact")
    if mode == "grid":
        cfg.setdefault("seed", seed)
    return make_profile(problem, mode, **cfg)


def _run_one(job):
    cfg, algo, seed, run_index, out_dir = job
    problem = build_problem(cfg.problem, seed)
    prof = build_profile(problem, cfg.profile, seed)
    params = tune(prof, "aeg" if algo.name == "aeg" else algo.name, **algo.params)
    rng = RngStream.for_run(seed, run_index)
    trace = run_algorithm(algo.name, problem, prof, params, rng, cfg.eps, cfg.max_rounds)
    path = os.path.join(out_dir, f"{algo.name}_seed{seed}.csv")
    trace.to_csv(path)
    return summary_row(trace, algo.name, seed, cfg.eps)


def summary_row(trace, name, seed, eps):
    hit = next((r for r in trace.records if r.grad_norm <= eps), None)
    last = trace.records[-1]

    def field_of(attr):
        return "" if hit is None else getattr(hit, attr)

    return {
        "algorithm": name, "seed": seed, "status": trace.status,
        "rounds_f_to_eps": field_of("rounds_f"), "rounds_g_to_eps": field_of("rounds_g"),
        "total_rounds_to_eps": "" if hit is None else hit.total_rounds,
        "comms_f_to_eps": field_of("comms_f"), "comms_g_to_eps": field_of("comms_g"),
        "final_rounds_f": last.rounds_f, "final_rounds_g": last.rounds_g,
        "final_grad_norm": repr(float(last.grad_norm)), "final_subopt": repr(float(last.subopt)),
    }


def _median(values):
    # Runs that never reached eps count as +inf.
    vals = [math.inf if v == "" else float(v) for v in values]
    return float(np.median(vals)) if vals else math.nan


def median_rows(rows):
    out = []
    for name in dict.fromkeys(r["algorithm"] for r in rows):
        mine = [r for r in rows if r["algorithm"] == name]
        out.append({
            "algorithm": name,
            "runs": len(mine),
            "converged": sum(r["status"] == "converged" for r in mine),
            "median_rounds_f_to_eps": repr(_median([r["rounds_f_to_eps"] for r in mine])),
            "median_rounds_g_to_eps": repr(_median([r["rounds_g_to_eps"] for r in mine])),
            "median_total_rounds_to_eps": repr(_median([r["total_rounds_to_eps"] for r in mine])),
        })
    return out


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def run_experiment(cfg, jobs=1, out_dir=None):
    """Run every (algorithm, seed) pair; write per-run traces and the summaries.

    Returns the list of summary rows (one per run, config order).
    """
    out_dir = cfg.output if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    work = [(cfg, algo, seed, i, out_dir)
            for seed in cfg.seeds for i, algo in enumerate(cfg.algorithms)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_one, work))
    else:
        rows = [_run_one(w) for w in work]
    _write_rows(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, rows)
    _write_rows(os.path.join(out_dir, "summary_median.csv"), MEDIAN_COLUMNS, median_rows(rows))
    return rows


# ---------------------------------------------------------------------------
# entry point


def _parser():
    ap = argparse.ArgumentParser(prog="compsep", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment grid from a YAML config")
    run.add_argument("config")
    run.add_argument("--seed-override", type=int, default=None,
                     help="replace the config's seed list by this single seed")
    run.add_argument("--max-rounds", type=int, default=None)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--jobs", type=int, default=1)
    ver = sub.add_parser("verify", help="run the self-check battery")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--fault", default=None, help=argparse.SUPPRESS)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify":
            from .verify import verify_suite
            results = verify_suite(seed=args.seed, fault=args.fault)
            return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        if args.seed_override is not None:
            cfg.seeds = [args.seed_override]
        if args.max_rounds is not None:
            if args.max_rounds < 1:
                raise ConfigError("--max-rounds must be positive")
            cfg.max_rounds = args.max_rounds
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        rows = run_experiment(cfg, jobs=args.jobs, out_dir=args.out_dir)
    except (ConfigError, CompsepError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # pragma: no cover - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    for r in rows:
        print(f"{r['algorithm']:9s} seed={r['seed']:<4d} {r['status']:11s} "
              f"rounds_f_to_eps={r['rounds_f_to_eps'] or '-'}")
    aborted = any(r["status"] in ("diverged", "uncertified") for r in rows)
    return EXIT_ABORTED if aborted else EXIT_OK
