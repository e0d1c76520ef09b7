"""Command-line entry point: ``latent-bridge <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline

log = logging.getLogger("latent_bridge")


def _setup_logging() -> None:
    level = os.environ.get("LATENT_BRIDGE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--out", help="run directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="seed for world, SVM and classifier")
    p.add_argument("--ridge", type=float, help="ridge penalty for the brain decoder")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latent-bridge", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    helps = {
        "simulate": "build the synthetic world and dataset",
        "fit-bridge": "fit the linear brain decoder",
        "fit-boundaries": "fit one SVM hyperplane per attribute",
        "fit-fmri-classifier": "train one brain-response classifier per attribute",
        "reconstruct": "decode, vote and manipulate each test stimulus",
        "evaluate": "score reconstructions and write report.json",
        "run-all": "run every stage in order",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "run-all":
            p.add_argument("--stage", default="simulate", choices=pipeline.STAGES,
                           help="resume from this stage using existing artifacts")
    return ap


def _resolve_config(args) -> config_mod.RunConfig:
    path = args.config
    if path is None and args.out and args.cmd not in ("simulate", "run-all"):
        saved = Path(args.out) / "run_config.json"
        if saved.exists():
            with open(saved, encoding="utf-8") as fh:
                raw = json.load(fh)["provenance"]["run_config"]
            return config_mod.from_dict(raw, seed=args.seed, ridge=args.ridge, out=args.out)
    return config_mod.load(path, seed=args.seed, ridge=args.ridge, out=args.out)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except (OSError, config_mod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = pipeline.Run(cfg)

    try:
        if args.cmd == "run-all":
            if args.stage == "simulate" and not args.force and run.root.exists() and any(run.root.iterdir()):
                raise pipeline.StageError("simulate", f"output directory {run.root} is not empty; pass --force")
            report_path, failures = pipeline.run_all(run, force=args.force, start=args.stage)
            print((run.root / "summary.txt").read_text(encoding="utf-8"), end="")
            print(f"report: {report_path}")
            for f in failures:
                print(f"threshold not met: {f}", file=sys.stderr)
            return 0 if not failures else 1
        out = pipeline.run_stage(args.cmd, run, force=args.force)
        if args.cmd == "evaluate":
            print((run.root / "summary.txt").read_text(encoding="utf-8"), end="")
        print(out)
        return 0
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
