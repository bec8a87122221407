"""Command line entry point."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from .errors import ConfigError, EmptyDirectory
from .pipeline import RunConfig, reingest_masks, run_batch
from .stats import feature_statistics, measurements_to_long


def _analyze_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("analyze", help="measure every scan in the given files or folders")
    p.add_argument("inputs", nargs="+", help=".vol files, fixture folders or archives, or folders of them")
    _common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output-dir", default="octquant_output")
    p.add_argument("--save-visualizations", action="store_true", help="write overlays, maps and profiles")
    p.add_argument("--choroid-measure", choices=("perp", "perpendicular", "vertical"), default=None,
                   help="choroid thickness direction for macular scans (default perpendicular)")
    p.add_argument("--linescan-roi-microns", type=float, default=6000.0,
                   help="full width of the fovea-centred window on line scans")
    p.add_argument("--region-threshold", type=float, default=None,
                   help="choroid region probability threshold (default 0.5 macular, 0.25 peripapillary)")
    p.add_argument("--slo-threshold", type=float, default=0.5)
    p.add_argument("--no-slo", action="store_true", help="skip SLO vessel analysis")


def _config(args: argparse.Namespace, inputs: list[str]) -> RunConfig:
    return RunConfig(
        inputs=inputs,
        output_dir=args.output_dir,
        save_visualizations=args.save_visualizations,
        choroid_measure=args.choroid_measure,
        linescan_roi_microns=args.linescan_roi_microns,
        region_threshold=args.region_threshold,
        slo_threshold=args.slo_threshold,
        analyse_slo=not args.no_slo,
        workers=getattr(args, "workers", 1),
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="octquant", description="Quantify retinal and choroidal OCT scans.")
    sub = ap.add_subparsers(dest="command", required=True)
    _analyze_parser(sub)

    p = sub.add_parser("reingest", help="recompute one scan from manually edited masks")
    p.add_argument("scan")
    _common(p)

    p = sub.add_parser("stats", help="repeatability statistics from a measurement table")
    p.add_argument("table", help="wide CSV with one row per scan, or long CSV with feature and value columns")
    p.add_argument("--id-column", default="id", help="column naming the eye")
    p.add_argument("--time-column", default="timepoint", help="column ordering repeats in time")
    p.add_argument("--features", nargs="*", default=None)
    p.add_argument("-o", "--output", default="repeatability.csv")

    p = sub.add_parser("demo", help="write a small synthetic corpus with masks")
    p.add_argument("folder")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--full-size", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            res = run_batch(_config(args, list(args.inputs)))
            failed = [r.name for r in res.results if r.failed]
            print(f"{len(res.results)} file(s) analysed, {len(failed)} failed; results in {res.csv_path}")
            for name in failed:
                print(f"  failed: {name}")
            return res.exit_code
        if args.command == "reingest":
            cfg = _config(args, [args.scan])
            cfg.validate()
            r = reingest_masks(args.scan, cfg)
            print(f"{r.name}: {'FAILED' if r.failed else 'updated'}")
            return 0
        if args.command == "stats":
            table = pd.read_csv(args.table)
            for col in (args.id_column, args.time_column):
                if col not in table.columns:
                    raise ConfigError(f"column {col!r} not in {args.table}")
            if {"feature", "value"} <= set(table.columns):
                long = table.rename(columns={args.id_column: "id", args.time_column: "timepoint"})
                if args.features:
                    long = long[long["feature"].isin(args.features)]
            else:
                long = measurements_to_long(table, args.id_column, args.time_column, args.features)
            out = feature_statistics(long)
            out.to_csv(args.output, index=False)
            print(f"{len(out)} feature(s) written to {args.output}")
            return 0
        if args.command == "demo":
            from .synthetic import write_demo_corpus

            paths = write_demo_corpus(Path(args.folder), args.n, small=not args.full_size)
            print(f"wrote {len(paths)} scan(s) to {args.folder}")
            return 0
    except (ConfigError, EmptyDirectory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
