"""Command-line front end: ``sagctl {run,sweep,ablate,validate}``.

All numeric output goes through :func:`fmt` (9 significant digits, no
locale) and every table has a fixed column order and row sort, so identical
inputs produce identical bytes. The manifest is the one exception: its
``wall_clock_s`` block records timings and is expected to differ.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .harness import TRACE_COLUMNS, ablation_suite, build, run_episode
from .metrics import METRIC_NAMES, aggregate
from .plant import ConfigError, NumericalBlowup

log = logging.getLogger("sagctl")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO = 0, 1, 2, 3

TRACE_HEADER = ("step", "reward", "J_bar") + TRACE_COLUMNS
LONG_HEADER = ("family", "severity", "method", "seed", "metric", "value")
AGG_HEADER = ("family", "severity", "method", "metric", "mean", "std", "median", "censored", "n")
EPISODE_FIELDS = ("ttr50", "ttr50_censored", "T_delta", "T_delta_censored", "auc", "ssr", "total_return")


def fmt(value):
    """Render a scalar for CSV/JSON: ints stay ints, floats get 9 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    out = format(x, ".9g")
    return "0" if out == "-0" else out


def _jsonable(value):
    """Round floats to the CSV precision; NaN becomes null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        return None if not math.isfinite(x) else float(format(x, ".9g"))
    return value


def _dump_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


class _Outputs:
    """Collects written files so the manifest can list them."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.paths = []
        self.root.mkdir(parents=True, exist_ok=True)

    def write(self, name, text):
        path = self.root / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.paths.append(name)
        return path


def trace_rows(trace):
    diag = trace.diagnostics
    for t in range(trace.horizon):
        yield (t, float(trace.rewards[t]), float(trace.J_bar[t])) + tuple(float(diag[k][t]) for k in TRACE_COLUMNS)


def _prefix_rows(prefix):
    n = len(prefix["reward"])
    for t in range(n):
        yield (t, prefix["reward"][t], prefix["J_bar"][t]) + tuple(prefix[k][t] for k in TRACE_COLUMNS)


def _episode_record(result):
    m = result.metrics.as_dict()
    return {"seed": result.seed, "method": result.method, "J_star": result.trace.J_star,
            **{k: m[k] for k in EPISODE_FIELDS}}


def parse_seeds(text):
    """``"0-4,7"`` -> ``[0, 1, 2, 3, 4, 7]``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"--seeds: cannot parse {part!r}") from exc
    if not seeds:
        raise ConfigError("--seeds: no seeds given")
    return seeds


def _methods(text, default):
    if text is None:
        return list(default)
    methods = [m.strip() for m in text.split(",") if m.strip()]
    for m in methods:
        if m not in cfgmod.METHODS:
            raise ConfigError(f"--method: {m!r} not in {cfgmod.METHODS}")
    return methods


def _with_overrides(cfg, seeds=None, method=None):
    over = {"protocol": {}}
    if seeds is not None:
        over["protocol"]["seeds"] = list(seeds)
    if method is not None:
        over["protocol"]["method"] = method
    return cfgmod.validate(cfgmod.merge(cfg, over))


def _manifest(cfg, seeds, methods, outputs, timings, extra=None):
    body = {
        "tool": "sagctl",
        "version": __version__,
        "config_hash": cfgmod.config_hash(cfg),
        "config": cfg,
        "seeds": list(seeds),
        "methods": list(methods),
        "outputs": sorted(outputs.paths + ["manifest.json"]),
        "wall_clock_s": timings,
    }
    if extra:
        body.update(extra)
    return body


def _timed_episode(setup, seed, method, timings):
    t0 = time.perf_counter()
    res = run_episode(setup, seed, method)
    timings[f"{method}/{seed}"] = round(time.perf_counter() - t0, 6)
    return res


def cmd_validate(config_path, quiet=False):
    cfg = cfgmod.load_config(config_path)
    build(cfg)  # constructs the controller, so gain synthesis errors surface here too
    if not quiet:
        sys.stdout.write(_dump_json({"config_hash": cfgmod.config_hash(cfg), "config": cfg}))
    return EXIT_OK


def cmd_run(config_path, out_dir, seeds=None, method=None):
    cfg = _with_overrides(cfgmod.load_config(config_path), seeds, method)
    seeds = cfg["protocol"]["seeds"]
    method = cfg["protocol"]["method"]
    out = _Outputs(out_dir)
    setup = build(cfg)
    timings, results = {}, []
    for seed in seeds:
        try:
            res = _timed_episode(setup, seed, method, timings)
        except NumericalBlowup as exc:
            prefix = getattr(exc, "prefix", None)
            if prefix is not None:
                out.write(f"trace_{method}_seed{seed}.partial.csv", _csv_text(TRACE_HEADER, _prefix_rows(prefix)))
            raise
        out.write(f"trace_{method}_seed{seed}.csv", _csv_text(TRACE_HEADER, trace_rows(res.trace)))
        results.append(res)
        log.info("seed %s: ttr50=%s ssr=%s", seed, res.metrics.ttr50, fmt(res.metrics.ssr))
    summary = {
        "config_hash": cfgmod.config_hash(cfg),
        "method": method,
        "episodes": [_episode_record(r) for r in results],
        "aggregate": aggregate([r.metrics for r in results]),
    }
    out.write("metrics.json", _dump_json(summary))
    out.write("manifest.json", _dump_json(_manifest(cfg, seeds, [method], out, timings)))
    return EXIT_OK


def sweep_tables(rows, agg):
    """Long-format and aggregated rows in their canonical order."""
    order = {m: i for i, m in enumerate(cfgmod.METHODS)}
    rows = sorted(rows, key=lambda r: (r["family"], r["severity"], order[r["method"]], r["seed"]))
    long_rows = []
    for r in rows:
        for name in METRIC_NAMES:
            long_rows.append((r["family"], r["severity"], r["method"], r["seed"], name, getattr(r["metrics"], name)))
    agg_rows = []
    for (family, sev, method) in sorted(agg, key=lambda k: (k[0], k[1], order[k[2]])):
        cell = agg[(family, sev, method)]
        for name in METRIC_NAMES:
            s = cell[name]
            agg_rows.append((family, sev, method, name, s["mean"], s["std"], s["median"], s["censored"], s["n"]))
    return long_rows, agg_rows


def cmd_sweep(config_path, sweep_path, out_dir, seeds=None, methods=None):
    cfg = cfgmod.load_config(config_path)
    spec = cfgmod.load_sweep(sweep_path)
    seeds = list(range(spec.trials)) if seeds is None else list(seeds)
    cfg = _with_overrides(cfg, seeds)
    methods = _methods(methods, ("frozen", "residual-full"))
    out = _Outputs(out_dir)
    timings, rows, agg = {}, [], {}
    for sev in spec.severities:
        cell_cfg = cfgmod.merge(cfg, {"shift": {"family": spec.family, "severity": sev, "channel": spec.channel}})
        setup = build(cell_cfg)
        for method in methods:
            cell = [_timed_episode(setup, s, method, timings.setdefault(fmt(sev), {})) for s in seeds]
            agg[(spec.family, sev, method)] = aggregate([r.metrics for r in cell])
            rows.extend({"family": spec.family, "severity": sev, "method": method, "seed": r.seed,
                         "metrics": r.metrics} for r in cell)
            log.info("%s %s %s: median ttr50=%s", spec.family, fmt(sev), method,
                     fmt(agg[(spec.family, sev, method)]["ttr50"]["median"]))
    long_rows, agg_rows = sweep_tables(rows, agg)
    out.write("sweep_long.csv", _csv_text(LONG_HEADER, long_rows))
    out.write("sweep_agg.csv", _csv_text(AGG_HEADER, agg_rows))
    sweep_echo = {"family": spec.family, "severities": list(spec.severities), "trials": spec.trials,
                  "channel": spec.channel}
    out.write("manifest.json", _dump_json(_manifest(cfg, seeds, methods, out, timings, {"sweep": sweep_echo})))
    return EXIT_OK


def cmd_ablate(config_path, out_dir, seeds=None, variants=None):
    cfg = _with_overrides(cfgmod.load_config(config_path), seeds)
    seeds = cfg["protocol"]["seeds"]
    variants = list(cfgmod.ABLATIONS if variants is None else variants)
    out = _Outputs(out_dir)
    t0 = time.perf_counter()
    results = ablation_suite(cfg, seeds, variants)
    elapsed = round(time.perf_counter() - t0, 6)
    per_episode, summary = [], []
    for name in variants:
        for r in sorted(results[name], key=lambda r: r.seed):
            m = r.metrics.as_dict()
            per_episode.append((name, r.seed) + tuple(m[k] for k in EPISODE_FIELDS))
        agg = aggregate([r.metrics for r in results[name]])
        for metric in METRIC_NAMES:
            s = agg[metric]
            summary.append((name, metric, s["mean"], s["std"], s["median"], s["censored"], s["n"]))
    out.write("ablation.csv", _csv_text(("variant", "seed") + EPISODE_FIELDS, per_episode))
    out.write("ablation_summary.csv",
              _csv_text(("variant", "metric", "mean", "std", "median", "censored", "n"), summary))
    out.write("manifest.json", _dump_json(
        _manifest(cfg, seeds, ["residual-full"], out, {"total": elapsed}, {"variants": variants})))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sagctl", description="Gated residual control experiments on desk-scale plants.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="YAML experiment config")
        if out:
            p.add_argument("--out", required=True, help="output directory (created if missing)")
            p.add_argument("--seeds", type=str, default=None, help="e.g. 0-9 or 1,3,5; overrides protocol.seeds")
        p.add_argument("--quiet", action="store_true", help="only print errors")

    p = sub.add_parser("run", help="run episodes for one method and write traces and metrics")
    common(p)
    p.add_argument("--method", default=None, choices=cfgmod.METHODS)

    p = sub.add_parser("sweep", help="severity sweep over one shift family")
    common(p)
    p.add_argument("--sweep", required=True, help="YAML file with family, severities, trials")
    p.add_argument("--method", default=None, help="comma-separated methods (default frozen,residual-full)")

    p = sub.add_parser("ablate", help="residual-full against each single-mechanism ablation")
    common(p)

    p = sub.add_parser("validate", help="parse and validate a config, then echo it with defaults filled")
    common(p, out=False)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        seeds = parse_seeds(args.seeds) if getattr(args, "seeds", None) else None
        try:
            if args.command == "validate":
                return cmd_validate(args.config, args.quiet)
            cfgmod.load_config(args.config)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        if args.command == "run":
            return cmd_run(args.config, args.out, seeds, args.method)
        if args.command == "sweep":
            try:
                cfgmod.load_sweep(args.sweep)
            except FileNotFoundError as exc:
                raise ConfigError(str(exc)) from exc
            return cmd_sweep(args.config, args.sweep, args.out, seeds, args.method)
        return cmd_ablate(args.config, args.out, seeds)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        log.error("%s", exc)
        return EXIT_BLOWUP
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
