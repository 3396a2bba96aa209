"""Command line front end: `cusplab run` and `cusplab report`.

Exit codes: 0 ok, 2 configuration error, 3 stage failure or missing
artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import render_report_text
from .config import ConfigError, RunConfig, parse_config
from .pipeline import STAGES, run_pipeline


def build_parser():
    p = argparse.ArgumentParser(prog="cusplab",
                                description="cusp billiard laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run pipeline stages")
    runp.add_argument("--config", type=str, default=None,
                      help="path to a flat key=value config file")
    runp.add_argument("--stages", type=str, default=",".join(STAGES),
                      help="comma-separated subset of "
                           f"{{{','.join(STAGES)}}}")
    runp.add_argument("--output-dir", type=str, default=None,
                      help="override the configured output directory")

    repp = sub.add_parser("report", help="print the report of a finished run")
    repp.add_argument("--dir", type=str, required=True,
                      help="output directory of a previous run")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("CUSPLAB_THREADS", "0")
    try:
        int(threads)
    except ValueError:
        print(f"error: CUSPLAB_THREADS must be an integer, got {threads!r}",
              file=sys.stderr)
        return 2

    if args.command == "run":
        try:
            if args.config:
                cfg = parse_config(Path(args.config).read_text())
            else:
                cfg = RunConfig().validate()
        except FileNotFoundError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        bad = [s for s in stages if s not in STAGES]
        if bad:
            print(f"config error: unknown stages {bad}", file=sys.stderr)
            return 2
        result = run_pipeline(cfg, stages, outdir=args.output_dir)
        if result["status"] != 0:
            print("stage failure; see MANIFEST.json in", result["outdir"],
                  file=sys.stderr)
            return 3
        print("artifacts written to", result["outdir"])
        return 0

    if args.command == "report":
        path = Path(args.dir) / "report.json"
        if not path.exists():
            print(f"no report.json in {args.dir}; run the analysis stage "
                  "first (cusplab run --stages analysis)", file=sys.stderr)
            return 3
        report = json.loads(path.read_text())
        print(render_report_text(report))
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
