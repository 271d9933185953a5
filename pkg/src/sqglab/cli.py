"""Command line entry point: ``sqglab <subcommand> --config file.toml [--seed u64] [--out dir]``."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import RUNNERS, ExperimentConfig, load_config, replay_archive


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _override(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    data = cfg.to_dict()
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        if key.startswith("extras."):
            data["extras"][key[len("extras.") :]] = _parse_value(value)
        else:
            data[key] = _parse_value(value)
    return ExperimentConfig.from_mapping(data)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqglab", description="Stochastic SQG Galerkin simulator and verification harness.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", help="TOML (or JSON) config file; defaults apply when omitted")
        s.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        s.add_argument("--out", default=None, help="output directory (default: sqglab-out/<subcommand>)")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. N=16 or extras.Ms=[4,8]")
        s.add_argument("--quiet", action="store_true", help="print only the summary line")
    r = sub.add_parser("replay", help="re-integrate the trajectory stored in a noise archive")
    r.add_argument("archive")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        rec = replay_archive(args.archive)
        print(f"replayed {len(rec.members)} members, {rec.n_steps} steps, final mean |psi|_L2^2 = {rec.l2_sq[:, -1].mean():.6g}")
        return 0
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.replace(seed=int(args.seed))
        if args.set:
            cfg = _override(cfg, args.set)
    except (OSError, ValueError, TypeError) as exc:
        print(f"sqglab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    rep = RUNNERS[args.command](cfg)
    out = args.out or f"sqglab-out/{args.command}"
    rep.write(out)
    lines = rep.summary_lines()
    print("\n".join(lines[:1] if args.quiet else lines))
    print(f"outputs written to {out} ({rep.runtime:.2f} s)")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
