"""Command-line entry point.

``mrdmoc run --config <path> [--out <dir>] [--jobs <n>] [--seed <u64>]``
executes the configured study and writes ``results.csv``, per-series CSV
files, SVG figures and a rerunnable ``manifest``.  ``mrdmoc validate
--config <path>`` only parses and checks the config.  Exit codes: 0 ok,
2 configuration problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigError, NumericError
from .studies import CSV_HEADER, StudyResult, run_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_format(row[key]) for key in CSV_HEADER])


def write_series(result: StudyResult, out_dir: Path) -> list:
    written = []
    for name, (header, table) in result.series.items():
        path = out_dir / f"series_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in table:
                writer.writerow([repr(float(x)) for x in row])
        written.append(path.name)
    return written


def write_manifest(cfg: RunConfig, result: StudyResult, out_dir: Path, extra: dict):
    """The manifest opens with the verbatim config (so it can be fed back to
    ``mrdmoc run --config manifest``) followed by the run summary as
    comments the config parser ignores."""
    lines = [cfg.source_text.rstrip("\n"), "", "# --- run summary (comments; file stays a valid config) ---"]
    for key, value in result.metadata.items():
        lines.append(f"# {key} = {value}")
    for key, value in extra.items():
        lines.append(f"# {key} = {value}")
    for key, value in result.summary.items():
        lines.append(f"# {key} = {value}")
    (out_dir / "manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_validate(args) -> int:
    try:
        load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        result = run_study(cfg, jobs=max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    extra = {"seed": args.seed if args.seed is not None else "none", "jobs": args.jobs}
    written = []
    if "csv" in cfg.formats:
        write_results_csv(result.rows, out_dir / "results.csv")
        written.append("results.csv")
        written += write_series(result, out_dir)
    if "svg" in cfg.formats:
        try:
            from .plotting import render

            written += render(result.payload, out_dir)
        except Exception as exc:  # plots are best-effort, CSV is the contract
            print(f"warning: plotting failed: {exc}", file=sys.stderr)
    write_manifest(cfg, result, out_dir, extra)
    written.append("manifest")
    print(f"{cfg.study_kind}: wrote {', '.join(written)} to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrdmoc",
        description="Multirate variational simulation and optimal control studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the study described by a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep points")
    run_p.add_argument("--seed", type=int, default=None, help="recorded in the manifest")
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validate", help="parse and validate a config file")
    val_p.add_argument("--config", required=True)
    val_p.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
