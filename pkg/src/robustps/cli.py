"""Command-line entry point: ``robustps <subcommand> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import dataset, pipeline
from .errors import ConfigError, RobustPSError

THREADS_ENV = "ROBUSTPS_THREADS"
log = logging.getLogger("robustps")


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pipeline",) + pipeline.STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name != "pipeline":
            p.add_argument("--stage-input", help="workspace holding upstream artifacts")
    p = sub.add_parser("synth", help="write a synthetic dataset (CSV, schema, truth)")
    p.add_argument("--config", help="config whose 'synthetic' block is used")
    p.add_argument("--preset", default="confounded", choices=sorted(dataset.PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def cmd_synth(args) -> dict:
    block = {"preset": args.preset}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        block = doc.get("synthetic") or block
    gen, _ = pipeline.synthetic_spec(block)
    data = dataset.synthesize(gen, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.export_csv(data, out / "data.csv")
    (out / "schema.json").write_text(json.dumps(data.schema.to_dict(), indent=1) + "\n")
    with open(out / "truth.csv", "w") as fh:
        fh.write("row,pattern\n")
        fh.writelines(f"{i},{p}\n" for i, p in enumerate(data.pattern.tolist()))
    return {"m": data.m, "d": data.d, "out": str(out)}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=thread_cap()):
            if args.command == "synth":
                result = cmd_synth(args)
            elif args.command == "pipeline":
                cfg = _load_config(args)
                manifest = pipeline.cmd_pipeline(cfg)
                result = {"out": cfg.out, "artifacts": len(manifest["artifacts"])}
            else:
                cfg = _load_config(args)
                manifest = pipeline.cmd_stage(args.command, cfg, stage_input=args.stage_input)
                result = {"out": cfg.out, "stage": args.command, "artifacts": len(manifest["artifacts"])}
    except RobustPSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
