"""Command-line entry point: ``zostab <subcommand> --config cfg.json --out path``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .harness import HarnessError, dumps, rho_summary, run_experiment

log = logging.getLogger("zostab")

SUBCOMMANDS = {
    "threshold": "threshold_table",
    "rho": "rho",
    "simulate": "mc_stability",
    "train": "eos_track",
    "catapult": "catapult",
    "sweep-mu": "mu_sweep",
    "sweep-batch": "batch_sweep",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zostab", description="Stability experiments for zeroth-order optimizers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, tag in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {tag} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output path (default: the config's output, else stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    tag = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args.config)
        if cfg.experiment != tag:
            raise ConfigError("experiment", f"{cfg.experiment!r} does not match subcommand {args.command!r} "
                                            f"(expected {tag!r})")
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        log.info("running %s with seed %d", tag, cfg.seed)
        table = run_experiment(cfg)
    except (ConfigError, HarnessError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if tag == "rho" and args.format == "json":
        text = json.dumps(rho_summary(cfg))
    else:
        text = dumps(table, args.format)
    out = args.out or cfg["output"]
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
