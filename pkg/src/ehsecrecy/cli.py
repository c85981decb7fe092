"""Command-line experiment runner.

Config files are TOML with four sections::

    [system]                      # all keys optional, defaults shown
    e_max = 30
    n = 15                        # quantization levels per gain
    N = 1                         # sub-carriers
    slot_duration = 1.0
    [system.arrivals]
    kind = "truncated_geometric"  # or "deterministic", "bernoulli"
    b_max = 6
    mean = 1.0                    # truncated_geometric: calibrated q (or give q)
    # b = 1                       # deterministic / bernoulli size
    # p = 0.5                     # bernoulli probability

    [channels]                    # one table (used for every carrier) or a list of N
    legit = { kind = "gamma", m = 1, mean = 1.0 }
    eave = { kind = "discrete", support = [0.0333, 0.1], probs = [0.7, 0.3] }

    [sweep]                       # optional
    parameter = "e_max"           # e_max | N | eave_bad_prob | mean_ratio
    values = [2, 5, 10, 20, 30]

    [output]
    variants = ["FULL", "PAR-CON", "PAR-VAR", "STAT"]
    splitter = "optimal"          # or "uniform"
    dir = "out"
    cache_dir = ""                # reward-table cache; empty disables it
    slots = 1000000
    seed = 1
    initial_battery = 0

Outputs are ``results.csv`` (deterministic for a given config and seed),
``timings.csv`` (wall-clock seconds per row), one ``report_<run_id>.json`` per
solved row and, for ``heatmap``, ``heatmap.csv``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, DomainError, OSPError
from .mdp import solve
from .models import (ArrivalProcess, FadingModel, SystemConfig, calibrate_truncated_geometric,
                     quantize)
from .sim import simulate

CSV_VERSION = 1
VARIANTS = {
    "FULL": ("full", "variable"),
    "PAR-CON": ("partial", "constant"),
    "PAR-VAR": ("partial", "variable"),
    "STAT": ("statistical", "constant"),
}
SWEEP_PARAMS = ("e_max", "N", "eave_bad_prob", "mean_ratio")
RESULT_COLUMNS = ["run_id", "variant", "splitter", "sweep_parameter", "sweep_value", "gain",
                  "iterations", "status"]
SIM_COLUMNS = ["sim_rate", "sim_std_error", "slots", "seed"]
_ALLOWED = {
    "system": {"e_max", "n", "N", "slot_duration", "arrivals"},
    "channels": {"legit", "eave"},
    "sweep": {"parameter", "values"},
    "output": {"variants", "splitter", "dir", "cache_dir", "slots", "seed", "initial_battery"},
}
_ARRIVAL_KEYS = {"kind", "b_max", "mean", "q", "b", "p"}
# Where a SystemConfig validation failure most likely originates, in order.
_FIELD_SOURCES = {
    "e_max": [("system", "e_max")],
    "n": [("system", "n")],
    "N": [("system", "N"), ("channels", "legit"), ("channels", "eave")],
    "b_max": [("system.arrivals", "b_max"), ("system.arrivals", "b"), ("system", "e_max")],
    "arrivals": [("system.arrivals", "p"), ("system.arrivals", "b"),
                 ("system.arrivals", "mean"), ("system.arrivals", "kind")],
}


@dataclass
class ExperimentSpec:
    base: SystemConfig
    variants: list
    splitter: str = "optimal"
    sweep_parameter: Optional[str] = None
    sweep_values: list = field(default_factory=list)
    out_dir: str = "out"
    cache_dir: Optional[str] = None
    slots: int = 1_000_000
    seed: int = 1
    initial_battery: int = 0
    config_hash: str = ""


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _line_of(text, key, section=None):
    """1-based line of ``key = ...`` (inside ``[section]`` if given), or None."""
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            if section is None or current == section or (current or "").startswith(section + "."):
                return no
    return None


class _Reader:
    def __init__(self, doc, text):
        self.doc = doc
        self.text = text

    def fail(self, msg, section, key):
        raise ConfigError(msg, field=f"{section}.{key}", line=_line_of(self.text, key, section))

    def get(self, section, key, kind, default):
        table = self.doc.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table", field=section,
                              line=_line_of(self.text, section))
        if key not in table:
            return default
        value = table[key]
        ok = {
            int: isinstance(value, int) and not isinstance(value, bool),
            float: isinstance(value, (int, float)) and not isinstance(value, bool),
            str: isinstance(value, str),
            list: isinstance(value, list),
            dict: isinstance(value, (dict, list)),
        }[kind]
        if not ok:
            self.fail(f"expected {kind.__name__}, got {type(value).__name__}", section, key)
        return float(value) if kind is float else value


def _fading(reader, desc, where):
    section, key = where
    if not isinstance(desc, dict):
        reader.fail("fading model must be a table", section, key)
    kind = desc.get("kind", "gamma")
    try:
        if kind == "gamma":
            return FadingModel.gamma(float(desc.get("m", 1.0)), float(desc.get("mean", 1.0)))
        if kind == "discrete":
            return FadingModel.discrete(desc["support"], desc["probs"])
    except KeyError as exc:
        reader.fail(f"discrete model is missing {exc.args[0]!r}", section, key)
    except DomainError as exc:
        reader.fail(str(exc), section, key)
    reader.fail(f"unknown fading kind {kind!r}", section, key)


def _carriers(reader, key, N):
    raw = reader.get("channels", key, dict, {"kind": "gamma", "m": 1, "mean": 1.0})
    items = raw if isinstance(raw, list) else [raw] * N
    if len(items) != N:
        reader.fail(f"expected {N} carrier models, got {len(items)}", "channels", key)
    return tuple(_fading(reader, d, ("channels", key)) for d in items)


def _arrivals(reader):
    table = reader.doc.get("system", {}).get("arrivals", {})
    text = reader.text
    sec = "system.arrivals"

    def val(key, default, kind=float):
        if key not in table:
            return default
        v = table[key]
        if kind is int and (not isinstance(v, int) or isinstance(v, bool)):
            raise ConfigError(f"expected int, got {v!r}", field=f"{sec}.{key}",
                              line=_line_of(text, key, sec))
        if kind is float and (not isinstance(v, (int, float)) or isinstance(v, bool)):
            raise ConfigError(f"expected number, got {v!r}", field=f"{sec}.{key}",
                              line=_line_of(text, key, sec))
        return v

    kind = table.get("kind", "truncated_geometric")
    try:
        if kind == "truncated_geometric":
            b_max = val("b_max", 6, int)
            if "q" in table:
                return ArrivalProcess.truncated_geometric(float(val("q", 1.0)), b_max)
            return calibrate_truncated_geometric(b_max, float(val("mean", 1.0)))
        if kind == "deterministic":
            return ArrivalProcess.deterministic(val("b", 1, int))
        if kind == "bernoulli":
            return ArrivalProcess.bernoulli(float(val("p", 0.5)), val("b", 1, int))
    except DomainError as exc:
        raise ConfigError(str(exc), field=sec, line=_line_of(text, "kind", sec)) from exc
    raise ConfigError(f"unknown arrival kind {kind!r}", field=f"{sec}.kind",
                      line=_line_of(text, "kind", sec))


def parse_config(text: str) -> ExperimentSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed config: {exc}", line=int(m.group(1)) if m else None) from exc
    for key, value in doc.items():
        if key not in _ALLOWED:
            raise ConfigError(f"unknown section [{key}]", field=key, line=_line_of(text, key))
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table", field=key, line=_line_of(text, key))
        for sub in value:
            if sub not in _ALLOWED[key]:
                raise ConfigError(f"unknown key {sub!r} in [{key}]", field=f"{key}.{sub}",
                                  line=_line_of(text, sub, key))
    arrivals = doc.get("system", {}).get("arrivals", {})
    if not isinstance(arrivals, dict):
        raise ConfigError("[system.arrivals] must be a table", field="system.arrivals",
                          line=_line_of(text, "arrivals"))
    for sub in arrivals:
        if sub not in _ARRIVAL_KEYS:
            raise ConfigError(f"unknown key {sub!r} in [system.arrivals]",
                              field=f"system.arrivals.{sub}",
                              line=_line_of(text, sub, "system.arrivals"))
    r = _Reader(doc, text)
    N = r.get("system", "N", int, 1)
    if N < 1:
        r.fail("N must be >= 1", "system", "N")
    try:
        base = SystemConfig(
            e_max=r.get("system", "e_max", int, 30),
            arrivals=_arrivals(r),
            legit=_carriers(r, "legit", N),
            eave=_carriers(r, "eave", N),
            n=r.get("system", "n", int, 15),
            slot_duration=r.get("system", "slot_duration", float, 1.0),
        )
    except ConfigError as exc:
        if exc.line is None and exc.field:
            for section, key in _FIELD_SOURCES.get(exc.field, [(None, exc.field)]):
                line = _line_of(text, key, section)
                if line is not None:
                    exc.field = f"{section}.{key}" if section else key
                    exc.line = line
                    break
        raise

    variants = r.get("output", "variants", list, list(VARIANTS))
    for v in variants:
        if v not in VARIANTS:
            r.fail(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}", "output", "variants")
    if not variants:
        r.fail("at least one variant is required", "output", "variants")
    splitter = r.get("output", "splitter", str, "optimal")
    if splitter not in ("optimal", "uniform"):
        r.fail(f"unknown splitter {splitter!r}", "output", "splitter")

    param = r.get("sweep", "parameter", str, None)
    values = r.get("sweep", "values", list, [])
    if param is not None:
        if param not in SWEEP_PARAMS:
            r.fail(f"unknown sweep parameter {param!r}", "sweep", "parameter")
        if not values:
            r.fail("sweep needs a non-empty value list", "sweep", "values")
        for v in values:
            try:
                apply_sweep(base, param, v)
            except (OSPError, TypeError) as exc:
                r.fail(f"invalid value {v!r}: {exc}", "sweep", "values")

    cache = r.get("output", "cache_dir", str, "")
    return ExperimentSpec(
        base=base,
        variants=list(variants),
        splitter=splitter,
        sweep_parameter=param,
        sweep_values=list(values),
        out_dir=r.get("output", "dir", str, "out"),
        cache_dir=cache or None,
        slots=r.get("output", "slots", int, 1_000_000),
        seed=r.get("output", "seed", int, 1),
        initial_battery=r.get("output", "initial_battery", int, 0),
        config_hash=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="--config") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# Sweeps and variants
# ---------------------------------------------------------------------------

def apply_sweep(base: SystemConfig, param: Optional[str], value) -> SystemConfig:
    if param is None:
        return base
    if param == "e_max":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError("e_max values must be integers", field="sweep.values")
        return base.with_(e_max=value)
    if param == "N":
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError("N values must be positive integers", field="sweep.values")
        return base.with_(legit=(base.legit[0],) * value, eave=(base.eave[0],) * value)
    if param == "eave_bad_prob":
        p = float(value)
        if not 0 <= p <= 1:
            raise ConfigError("eave_bad_prob must lie in [0, 1]", field="sweep.values")
        eave = []
        for model in base.eave:
            if model.kind != "discrete" or len(model.support) != 2:
                raise ConfigError("eave_bad_prob needs two-point discrete eavesdropper models",
                                  field="sweep.parameter")
            bad, good = model.support
            eave.append(FadingModel.discrete([bad, good], [p, 1.0 - p]))
        return base.with_(eave=tuple(eave))
    if param == "mean_ratio":
        ratio = float(value)
        if not ratio > 0:
            raise ConfigError("mean_ratio must be positive", field="sweep.values")
        legit = []
        for g, h in zip(base.legit, base.eave):
            if g.kind != "gamma" or h.kind != "gamma":
                raise ConfigError("mean_ratio needs gamma fading models", field="sweep.parameter")
            legit.append(FadingModel.gamma(g.m, ratio * h.mean_gain))
        return base.with_(legit=tuple(legit))
    raise ConfigError(f"unknown sweep parameter {param!r}", field="sweep.parameter")


def variant_config(config: SystemConfig, variant: str) -> SystemConfig:
    csi, coding = VARIANTS[variant]
    return config.with_(csi=csi, coding=coding)


def _points(spec):
    values = spec.sweep_values if spec.sweep_parameter else [None]
    points = []
    for i, value in enumerate(values):
        for variant in spec.variants:
            tag = "" if value is None else f"-{spec.sweep_parameter}={value}"
            points.append((f"{i:03d}-{variant}{tag}", variant, value))
    return points


def _run_point(job):
    spec, run_id, variant, value, do_sim = job
    row = {
        "run_id": run_id, "variant": variant, "splitter": spec.splitter,
        "sweep_parameter": spec.sweep_parameter or "",
        "sweep_value": "" if value is None else value,
        "gain": "", "iterations": "", "status": "ok",
    }
    if do_sim:
        row.update({"sim_rate": "", "sim_std_error": "", "slots": spec.slots, "seed": spec.seed})
    report_json = None
    started = time.perf_counter()
    try:
        cfg = variant_config(apply_sweep(spec.base, spec.sweep_parameter, value), variant)
        report = solve(cfg, splitter=spec.splitter, cache_dir=spec.cache_dir)
        row["gain"] = repr(report.gain)
        row["iterations"] = report.iterations
        report_json = report.to_json()
        if do_sim:
            res = simulate(cfg, report.policy, spec.slots, spec.seed,
                           initial_battery=min(spec.initial_battery, cfg.e_max))
            row["sim_rate"] = repr(res.estimated_rate)
            row["sim_std_error"] = repr(res.std_error)
    except OSPError as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row, report_json, time.perf_counter() - started


def _execute(spec, threads, do_sim):
    jobs = [(spec, rid, var, val, do_sim) for rid, var, val in _points(spec)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_point, jobs))  # map keeps sweep order
    return [_run_point(j) for j in jobs]


def _write_csv(path, columns, rows, spec):
    buf = io.StringIO()
    buf.write(f"# ehsecrecy results v{CSV_VERSION} config_sha256={spec.config_hash}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in columns})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def run_solve(spec: ExperimentSpec, threads: int = 1, simulate_rows: bool = False) -> list:
    """Solve every (sweep value, variant) point and write the output files."""
    os.makedirs(spec.out_dir, exist_ok=True)
    results = _execute(spec, threads, simulate_rows)
    rows = [r for r, _, _ in results]
    columns = RESULT_COLUMNS + (SIM_COLUMNS if simulate_rows else [])
    _write_csv(os.path.join(spec.out_dir, "results.csv"), columns, rows, spec)
    _write_csv(os.path.join(spec.out_dir, "timings.csv"), ["run_id", "wall_seconds"],
               [{"run_id": r["run_id"], "wall_seconds": f"{t:.3f}"} for r, _, t in results], spec)
    for row, report, _ in results:
        if report is not None:
            with open(os.path.join(spec.out_dir, f"report_{row['run_id']}.json"), "w",
                      encoding="utf-8") as fh:
                fh.write(report + "\n")
    return rows


def run_simulate(spec: ExperimentSpec, threads: int = 1) -> list:
    return run_solve(spec, threads, simulate_rows=True)


def emit_policy_heatmap_data(report, config: SystemConfig) -> list:
    """Rows (e, g-centroid, h-centroid, rho_tot) of a one-carrier full-CSI policy."""
    if config.N != 1 or config.csi != "full":
        raise DomainError("heatmap data needs a one-carrier full-CSI policy")
    g = quantize(config.legit[0], config.n).centroids
    h = quantize(config.eave[0], config.n).centroids
    total = report.policy.total
    rows = []
    for e in range(total.shape[0]):
        for ig, gv in enumerate(g):
            for ih, hv in enumerate(h):
                rows.append((e, gv, hv, int(total[e, ig * len(h) + ih])))
    return rows


def run_heatmap(spec: ExperimentSpec) -> list:
    cfg = variant_config(spec.base, "FULL")
    report = solve(cfg, splitter=spec.splitter, cache_dir=spec.cache_dir)
    rows = emit_policy_heatmap_data(report, cfg)
    os.makedirs(spec.out_dir, exist_ok=True)
    _write_csv(os.path.join(spec.out_dir, "heatmap.csv"), ["e", "g", "h", "rho_tot"],
               [{"e": e, "g": repr(g), "h": repr(h), "rho_tot": a} for e, g, h, a in rows], spec)
    return rows


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _parser():
    p = _Parser(prog="ehsecrecy",
                description="Optimal secrecy policies for energy-harvesting links.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in ("solve", "simulate", "sweep", "heatmap"):
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, help="TOML experiment file")
        s.add_argument("--out", help="output directory (overrides [output] dir)")
        s.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
        s.add_argument("--slots", type=int, help="simulated slots per row")
        s.add_argument("--threads", type=int, default=1, help="worker processes")
        s.add_argument("--splitter", choices=("optimal", "uniform"))
    return p


def _emit_error(kind, message, **extra):
    doc = {"error": kind, "message": message}
    doc.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except _ArgError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    try:
        spec = load_config(args.config)
        if args.out:
            spec.out_dir = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer", field="--seed")
            spec.seed = args.seed
        if args.slots is not None:
            if args.slots < 100:
                raise ConfigError("need at least 100 slots", field="--slots")
            spec.slots = args.slots
        if args.splitter:
            spec.splitter = args.splitter
        if args.threads < 1:
            raise ConfigError("threads must be >= 1", field="--threads")
        if args.verb == "solve":
            spec.sweep_parameter, spec.sweep_values = None, []
            rows = run_solve(spec, args.threads)
        elif args.verb == "sweep":
            if spec.sweep_parameter is None:
                raise ConfigError("sweep verb needs a [sweep] section", field="sweep")
            rows = run_solve(spec, args.threads)
        elif args.verb == "simulate":
            rows = run_simulate(spec, args.threads)
        else:
            run_heatmap(spec)
            rows = []
    except ConfigError as exc:
        _emit_error("ConfigError", exc.args[0], line=exc.line, field=exc.field)
        return 2
    except OSPError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        _emit_error("PartialFailure", f"{len(failed)} of {len(rows)} rows failed",
                    rows=[r["run_id"] for r in failed])
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
