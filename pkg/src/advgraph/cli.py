"""Command line entry point: ``advgraph <command> --config <path> [--seed N] [--workers N] [key=value ...]``."""
import argparse
import logging
from pathlib import Path
import sys

from . import __version__
from .pipeline import STAGES, PipelineConfig, PipelineError, fixture_config_text, run_all, run_stage

EXTRA = ("init", "run-all")


def build_parser():
    p = argparse.ArgumentParser(prog="advgraph", description=__doc__.split(":")[0])
    p.add_argument("command", choices=list(STAGES) + list(EXTRA))
    p.add_argument("target", nargs="?", help="directory for `init`")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"advgraph {__version__}")
    return p


def _overrides(items):
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise PipelineError(f"override {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init":
            if not args.target:
                raise PipelineError("init needs a target directory")
            d = Path(args.target)
            d.mkdir(parents=True, exist_ok=True)
            cfg_path = d / "advgraph.cfg"
            if cfg_path.exists():
                raise PipelineError(f"{cfg_path} already exists")
            cfg_path.write_text(fixture_config_text(), encoding="utf-8")
            print(cfg_path)
            return 0
        items = ([args.target] if args.target else []) + args.overrides
        overrides = _overrides(items)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        if not args.config:
            raise PipelineError("--config is required")
        cfg = PipelineConfig.load(args.config, overrides)
        if args.command == "run-all":
            run_all(cfg)
            print(cfg.path("report").read_text(encoding="utf-8"), end="")
        else:
            for path in run_stage(args.command, cfg):
                print(path)
            if args.command == "report":
                print(cfg.path("report").read_text(encoding="utf-8"), end="")
    except PipelineError as exc:
        print(f"advgraph: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
