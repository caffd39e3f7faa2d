"""Command line entry point: ``da-forge <scenario> [options]``."""

from __future__ import annotations

import argparse
import sys

from . import config as cfgmod
from . import pipeline
from .errors import ConfigError, DaForgeError
from .report import emit


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="da-forge", description="Construct, certify and simulate DA maps on T^3.")
    p.add_argument("scenario", choices=cfgmod.SCENARIOS)
    p.add_argument("--config", help="INI run configuration (missing keys use the pinned defaults)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=cfgmod.FORMATS)
    p.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return pipeline.EXIT_USAGE if exc.code else pipeline.EXIT_PASS
    try:
        cfg = cfgmod.load(args.config, scenario=args.scenario, seed=args.seed, out=args.out,
                          format=args.format, workers=args.workers)
    except (ConfigError, ValueError) as exc:
        print(f"da-forge: {exc}", file=sys.stderr)
        return pipeline.EXIT_USAGE
    report = pipeline.run(cfg)
    for line in report.summary_lines():
        print(line)
    try:
        paths = emit(report, cfg.format, cfg.out)
    except DaForgeError as exc:
        print(f"da-forge: {exc}", file=sys.stderr)
        return pipeline.EXIT_USAGE
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return pipeline.exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
