"""``gpuscale`` command line: ingest, fit, tradeoff, simulate, report.

Exit codes:

    0  success
    2  usage error
    3  missing input file or directory
    4  malformed input (unparseable CSV/manifest/JSON)
    5  validation failure (strict-mode invariant violation)
    6  schema mismatch in a JSON document

Outputs go to ``--out-dir``, defaulting to ``$GPUSCALE_OUTPUT_DIR`` and then
the current directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .metrics import run_metrics
from .reporting import (SchemaError, dumps, epochs_csv, fits_document, metrics_document, report_bundle,
                        tradeoff_document)
from .scaling import DEFAULT_KNEE_THRESHOLD
from .synth import load_specs, simulate_corpus
from .telemetry import TelemetryError, ValidationError, parse_epoch_windows, parse_manifest, parse_telemetry
from .tradeoff import DEFAULT_MAX_SLOWDOWN

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_PARSE = 4
EXIT_VALIDATION = 5
EXIT_SCHEMA = 6

OUTPUT_DIR_ENV = "GPUSCALE_OUTPUT_DIR"
RUN_FILES = ("telemetry.csv", "epochs.csv", "manifest.txt")

_GLOBAL_DEFAULTS = {
    "strict": True,
    "paper_energy": False,
    "collapse_replicates": False,
    "max_slowdown": DEFAULT_MAX_SLOWDOWN,
    "baseline_cap": None,
    "seed": None,
    "out_dir": None,
}


class MissingInput(Exception):
    pass


def _global_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=argparse.SUPPRESS,
                      help="fail on the first invalid row (default)")
    mode.add_argument("--lenient", dest="strict", action="store_false", default=argparse.SUPPRESS,
                      help="drop invalid rows and report them as warnings")
    g.add_argument("--paper-energy", action="store_true", default=argparse.SUPPRESS,
                   help="energy as mean power x wall time instead of the trapezoidal integral")
    g.add_argument("--collapse-replicates", action="store_true", default=argparse.SUPPRESS,
                   help="average epoch times per GPU count before fitting")
    g.add_argument("--max-slowdown", type=float, default=argparse.SUPPRESS,
                   help=f"slowdown budget for cap selection (default {DEFAULT_MAX_SLOWDOWN})")
    g.add_argument("--baseline-cap", type=float, default=argparse.SUPPRESS,
                   help="power cap used as baseline (default: highest cap in each family)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the seed of every simulated family")
    g.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS,
                   help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="gpuscale", parents=[common],
                                     description="GPU training telemetry, power-law scaling fits and power-cap trade-offs.")
    parser.add_argument("--version", action="version", version=f"gpuscale {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="telemetry -> per-run metrics JSON + per-epoch CSV")
    p.add_argument("paths", nargs="*", type=Path,
                   help="run directories (with telemetry.csv, epochs.csv, manifest.txt) or corpus roots")
    p.add_argument("--run", nargs=3, action="append", default=[], metavar=("TELEMETRY", "EPOCHS", "MANIFEST"),
                   help="explicit file triple for one run; repeatable")

    p = sub.add_parser("fit", parents=[common], help="metrics JSON -> power-law fits JSON")
    p.add_argument("metrics", nargs="+", type=Path)
    p.add_argument("--group-by", default="model,power_cap_w,clock_cap_mhz",
                   help="comma-separated manifest keys defining one regression each")
    p.add_argument("--knee-threshold", type=float, default=DEFAULT_KNEE_THRESHOLD,
                   help="relative residual that marks departure from the power law")

    p = sub.add_parser("tradeoff", parents=[common], help="metrics JSON -> power-cap recommendation JSON")
    p.add_argument("metrics", nargs="+", type=Path)
    p.add_argument("--carbon-intensity", type=float, default=None,
                   help="grid intensity in g CO2/kWh; adds CO2 estimates (no default)")

    p = sub.add_parser("simulate", parents=[common], help="spec JSON -> synthetic run corpus")
    p.add_argument("spec", type=Path)

    p = sub.add_parser("report", parents=[common], help="metrics/fits/tradeoff JSON -> report + plot CSVs")
    p.add_argument("inputs", nargs="+", type=Path)
    return parser


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise MissingInput(f"no such file: {path}") from None


def _read_json(path: Path):
    try:
        return json.loads(_read_bytes(path))
    except json.JSONDecodeError as err:
        raise TelemetryError(f"{path}: invalid JSON: {err}") from None


def _discover(paths: list[Path]) -> list[tuple[str, Path, Path, Path]]:
    runs = []
    for root in paths:
        if not root.exists():
            raise MissingInput(f"no such file or directory: {root}")
        if root.is_file():
            root = root.parent
        if (root / "manifest.txt").exists() or (root / "telemetry.csv").exists():
            dirs, base = [root], root.parent
        else:
            dirs, base = sorted(p.parent for p in root.rglob("manifest.txt")), root
            if not dirs:
                raise MissingInput(f"no run directories (containing manifest.txt) under {root}")
        for d in dirs:
            missing = [f for f in RUN_FILES if not (d / f).exists()]
            if missing:
                raise MissingInput(f"{d}: missing {', '.join(missing)}")
            runs.append((d.relative_to(base).as_posix(), d / "telemetry.csv", d / "epochs.csv", d / "manifest.txt"))
    return runs


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def cmd_ingest(args) -> list[Path]:
    runs = _discover(args.paths)
    for tel, ep, man in args.run:
        tel, ep, man = Path(tel), Path(ep), Path(man)
        runs.append((man.parent.name or str(man), tel, ep, man))
    if not runs:
        raise MissingInput("nothing to ingest: give run directories or --run triples")
    results = []
    for source, tel, ep, man in runs:
        blobs = {"telemetry": _read_bytes(tel), "epochs": _read_bytes(ep), "manifest": _read_bytes(man)}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                manifest = parse_manifest(blobs["manifest"])
                samples = parse_telemetry(blobs["telemetry"], strict=args.strict)
                windows = parse_epoch_windows(blobs["epochs"], strict=args.strict)
                metrics = run_metrics(manifest, samples, windows, strict=args.strict,
                                      paper_energy=args.paper_energy)
            except TelemetryError as err:
                raise type(err)(f"{source}: {err}") from None
        args.captured += [f"{source}: {w.message}" for w in caught]
        digests = {k: hashlib.sha256(v).hexdigest() for k, v in blobs.items()}
        results.append((source, metrics, digests))
    doc = metrics_document(results, args.strict, args.paper_energy, args.captured)
    return [_write(args.out_dir, "metrics.json", dumps(doc)), _write(args.out_dir, "epochs.csv", epochs_csv(doc))]


def cmd_fit(args) -> list[Path]:
    docs = [_read_json(p) for p in args.metrics]
    group_by = tuple(k.strip() for k in args.group_by.split(",") if k.strip())
    doc = fits_document(docs, group_by, collapse=args.collapse_replicates, knee_threshold=args.knee_threshold)
    args.captured.extend(doc["warnings"])
    return [_write(args.out_dir, "fits.json", dumps(doc))]


def cmd_tradeoff(args) -> list[Path]:
    docs = [_read_json(p) for p in args.metrics]
    if args.max_slowdown < 0:
        raise ValueError("--max-slowdown must be non-negative")
    doc = tradeoff_document(docs, args.baseline_cap, args.max_slowdown, args.carbon_intensity)
    args.captured.extend(doc["warnings"])
    return [_write(args.out_dir, "recommendations.json", dumps(doc))]


def cmd_simulate(args) -> list[Path]:
    try:
        specs = load_specs(_read_bytes(args.spec), seed=args.seed)
    except (json.JSONDecodeError, TypeError) as err:
        raise TelemetryError(f"{args.spec}: invalid spec: {err}") from None
    runs = simulate_corpus(specs, args.out_dir)
    return sorted({p.parent for p in runs})


def cmd_report(args) -> list[Path]:
    docs = [_read_json(p) for p in args.inputs]
    files = report_bundle(docs)
    return [_write(args.out_dir, name, text) for name, text in files.items()]


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "tradeoff": cmd_tradeoff, "simulate": cmd_simulate,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if args.out_dir is None:
        args.out_dir = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    args.captured = []

    def fail(code, err):
        print(f"gpuscale: error: {err}", file=sys.stderr)
        return code

    try:
        written = COMMANDS[args.command](args)
    except MissingInput as err:
        return fail(EXIT_MISSING, err)
    except ValidationError as err:
        return fail(EXIT_VALIDATION, err)
    except TelemetryError as err:
        return fail(EXIT_PARSE, err)
    except SchemaError as err:
        return fail(EXIT_SCHEMA, err)
    except (ValueError, KeyError) as err:
        return fail(EXIT_PARSE, err)
    for m in args.captured:
        print(f"gpuscale: warning: {m}", file=sys.stderr)
    if args.captured:
        print(f"gpuscale: {len(args.captured)} warning(s)", file=sys.stderr)
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
