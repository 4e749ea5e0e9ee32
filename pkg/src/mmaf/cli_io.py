"""Command-line front end and bit-stable report I/O.

Precedence for every setting: built-in default < subcommand default <
``--config`` file < command-line flag; ``MMAF_SEED`` overrides the seed from
any source.  The manifest records where each value came from.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .mc_engine import (
    CONFIG_KEYS,
    MIXING_PARTS,
    ExperimentConfig,
    Report,
    occupation_rows,
    run_clt,
    run_mixing,
    run_moments,
    run_simulate,
    run_small_time,
    sample_matrix,
)
from .rng_paths import ConfigurationError

SUBCOMMANDS = ("simulate", "clt", "moments", "mixing", "smalltime")

# settings that differ from the ExperimentConfig defaults per subcommand
SUBCOMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"reps": 2, "n": 16},
    "clt": {},
    "moments": {"function": "one", "reps": 4000},
    "mixing": {"reps": 5000},
    "smalltime": {"reps": 5000},
}

# flag dest -> config key
FLAG_KEYS = {
    "T": "T", "M": "M", "t": "t", "n": "n", "reps": "reps", "pad": "pad",
    "seed": "master_seed", "function": "function", "offset": "offset", "kmax": "k_max",
    "bridge": "bridge", "workers": "workers", "p_list": "p_list", "t_list": "t_list",
    "steps_per_t": "steps_per_t", "interval": "interval", "gap_reps": "gap_reps",
    "gap_M": "gap_M", "coupling_reps": "coupling_reps", "decay_lags": "decay_lags",
}

TUPLE_KEYS = {"p_list", "t_list", "interval", "coupling_js"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmaf", description="Modified massive Arratia flow simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="JSON file with ExperimentConfig keys")
    g.add_argument("--T", type=float, help="time horizon")
    g.add_argument("--M", type=int, help="grid steps")
    g.add_argument("--t", type=float, help="evaluation time (default T)")
    g.add_argument("--n", type=int, help="CLT window size (unit intervals)")
    g.add_argument("--reps", type=int, help="replications")
    g.add_argument("--pad", type=int, help="truncation padding (default ceil(4 sqrt T) + 8)")
    g.add_argument("--seed", type=int, help="master seed (MMAF_SEED overrides)")
    g.add_argument("--function", help="sin2pi | one | halfind | zero | const:<c>")
    g.add_argument("--offset", type=float, help="interval offset in [0, 1)")
    g.add_argument("--kmax", type=int, help="covariance truncation lag")
    g.add_argument("--bridge", action="store_true", default=None,
                   help="Brownian-bridge crossing correction")
    g.add_argument("--workers", type=int, help="worker processes")
    o = common.add_argument_group("output")
    o.add_argument("--out", type=Path, default=Path("mmaf_out"), help="output directory")
    o.add_argument("--format", choices=("csv", "json"), default="csv")

    sub.add_parser("simulate", parents=[common], help="dump realizations (positions and events)")
    clt = sub.add_parser("clt", parents=[common], help="CLT for occupation functionals")
    clt.add_argument("--dump-occupation", action="store_true",
                     help="also write per-replication A_k rows")
    mom = sub.add_parser("moments", parents=[common], help="moment bounds over t")
    mom.add_argument("--p-list", dest="p_list", type=float, nargs="+")
    mom.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    mix = sub.add_parser("mixing", parents=[common],
                         help="gap probabilities, coupling and covariance decay")
    mix.add_argument("--parts", nargs="+", choices=MIXING_PARTS, default=list(MIXING_PARTS))
    mix.add_argument("--gap-reps", dest="gap_reps", type=int)
    mix.add_argument("--gap-M", dest="gap_M", type=int)
    mix.add_argument("--coupling-reps", dest="coupling_reps", type=int)
    mix.add_argument("--decay-lags", dest="decay_lags", type=int)
    st = sub.add_parser("smalltime", parents=[common], help="small-time variance asymptotics")
    st.add_argument("--t-list", dest="t_list", type=float, nargs="+")
    st.add_argument("--steps-per-t", dest="steps_per_t", type=int)
    return parser


def load_config_file(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config: {path} is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config: top level must be an object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigurationError(f"{unknown[0]}: unknown configuration key")
    return data


def _coerce(key: str, value: Any) -> Any:
    if key in TUPLE_KEYS and value is not None:
        return tuple(value)
    if key == "gap_cases":
        return tuple((int(j), float(t)) for j, t in value)
    return value


def parse_config(command: str, args: argparse.Namespace | None = None,
                 env: dict[str, str] | None = None) -> tuple[ExperimentConfig, dict[str, str]]:
    """Merge defaults, config file, flags and environment into a validated config.

    Returns the config and a ``{key: source}`` provenance map.
    """
    if command not in SUBCOMMANDS:
        raise ConfigurationError(f"command: unknown subcommand {command!r}")
    env = os.environ if env is None else env
    values: dict[str, Any] = {"experiment": command}
    source = {k: "default" for k in CONFIG_KEYS}
    source["experiment"] = "command"
    for k, v in SUBCOMMAND_DEFAULTS[command].items():
        values[k] = v
        source[k] = "subcommand default"
    cfg_path = getattr(args, "config", None) if args is not None else None
    if cfg_path is not None:
        for k, v in load_config_file(cfg_path).items():
            if k == "experiment":
                continue
            values[k] = _coerce(k, v)
            source[k] = f"config file {cfg_path}"
    if args is not None:
        for dest, key in FLAG_KEYS.items():
            v = getattr(args, dest, None)
            if v is not None:
                values[key] = _coerce(key, v)
                source[key] = "flag"
    if "MMAF_SEED" in env:
        try:
            values["master_seed"] = int(env["MMAF_SEED"])
        except ValueError:
            raise ConfigurationError(f"master_seed: MMAF_SEED={env['MMAF_SEED']!r} is not an integer") from None
        source["master_seed"] = "env MMAF_SEED"
    if int(values.get("master_seed", 0)) < 0:
        raise ConfigurationError("master_seed: must be nonnegative")
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(f"config: {exc}") from None
    return cfg, source


# --- report I/O ------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return obj.item()
    return obj


def write_report(report: Report, fmt: str, path: str | Path) -> Path:
    """Write ``report`` as CSV (fixed columns, 17 significant digits) or JSON."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(report.columns)
            for row in report.rows:
                if len(row) != len(report.columns):
                    raise ValueError(f"row {row!r} does not match columns {report.columns}")
                w.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        doc = {
            "experiment": report.experiment,
            "columns": list(report.columns),
            "rows": _jsonable(report.rows),
            "summary": _jsonable(report.summary),
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_report(path: str | Path) -> Report:
    """Inverse of ``write_report(..., "json", path)``."""
    doc = json.loads(Path(path).read_text())
    return Report(doc["experiment"], tuple(doc["columns"]), [tuple(r) for r in doc["rows"]],
                  doc["summary"])


def write_summary(report: Report, path: Path) -> Path:
    path.write_text(json.dumps(_jsonable(report.summary), indent=1, sort_keys=True) + "\n")
    return path


# --- dispatch ----------------------------------------------------------------------

def run_command(command: str, cfg: ExperimentConfig, args: argparse.Namespace) -> tuple[list[Report], list[str]]:
    """Run one subcommand; returns its reports and any failed parts."""
    if command == "simulate":
        return list(run_simulate(cfg)), []
    if command == "clt":
        A = sample_matrix(cfg)
        reports = [run_clt(cfg, samples=A)]
        if getattr(args, "dump_occupation", False):
            reports.append(Report("occupation", ("rep", "k", "A_k"), occupation_rows(A)))
        return reports, []
    if command == "moments":
        return [run_moments(cfg)], []
    if command == "mixing":
        report = run_mixing(cfg, getattr(args, "parts", MIXING_PARTS))
        return [report], list(report.summary.get("failed", []))
    if command == "smalltime":
        return [run_small_time(cfg)], []
    raise ConfigurationError(f"command: unknown subcommand {command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        cfg, source = parse_config(args.command, args)
    except ConfigurationError as exc:
        print(f"mmaf: error: {exc}", file=sys.stderr)
        return 2
    out_dir: Path = args.out
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"mmaf: error: out: cannot create {out_dir}: {exc.strerror}", file=sys.stderr)
        return 2
    try:
        reports, failed = run_command(args.command, cfg, args)
    except ConfigurationError as exc:
        print(f"mmaf: error: {exc}", file=sys.stderr)
        return 2
    outputs = []
    try:
        for rep in reports:
            outputs.append(str(write_report(rep, args.format, out_dir / f"{rep.experiment}.{args.format}")))
            if args.format == "csv" and rep.summary:
                outputs.append(str(write_summary(rep, out_dir / f"{rep.experiment}_summary.json")))
        manifest = {
            "tool": "mmaf",
            "version": __version__,
            "command": args.command,
            "master_seed": cfg.master_seed,
            "config": _jsonable(asdict(cfg)),
            "provenance": source,
            "outputs": outputs,
            "failed": failed,
            "duration_s": round(time.time() - started, 3),
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"mmaf: error: out: cannot write to {out_dir}: {exc.strerror}", file=sys.stderr)
        return 1
    if failed:
        print(f"mmaf: failed experiments: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0

