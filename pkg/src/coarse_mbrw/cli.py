"""Command line: ``coarse-mbrw <subcommand> [options]``.

Every subcommand builds a :class:`RunConfig`, runs it, writes its outputs
and ``manifest.json`` into ``--out``, and exits with the manifest status:
0 ok, 1 failed checks, 2 invalid configuration, 3 poor fit, 4 mostly undecided.
"""
from __future__ import annotations

import argparse
import sys

from .runner import EXIT_INVALID, ConfigError, RunConfig, run_experiment


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    # unset options stay out of the namespace so a --config file is not overridden
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads for field sampling (default 1)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--config", help="JSON run config; command-line options override it")

    p = argparse.ArgumentParser(prog="coarse-mbrw", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common])

    s = add("validate-covariance", "tabulate G(d) and lambda(d) and check |lambda| <= 6k")
    s.add_argument("--k", type=int)

    s = add("sample-field", "sample one field on the torus and write it in the binary field format")
    s.add_argument("--k", type=int)
    s.add_argument("--grid", type=int)

    s = add("fit-moments", "ball-mass moment and median scaling fits")
    s.add_argument("--gamma", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--q", type=_floats, help="comma-separated moment orders")

    s = add("simulate-lbm", "Liouville Brownian motion positions at time t")
    s.add_argument("--gamma", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--t", type=float)
    s.add_argument("--replicas", type=int)

    s = add("classify", "fast / slow / very-fast classification of points in one box")
    s.add_argument("--mode", choices=("fast", "slow", "very-fast"))
    s.add_argument("--k", type=int)
    s.add_argument("--r", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--grid", type=int, help="window resolution of the fine field")
    s.add_argument("--points", type=int, help="m for the m x m point grid")
    s.add_argument("--paths", type=int, help="inner path replicas per point")
    s.add_argument("--C3", type=float)
    s.add_argument("--c", type=float)

    s = add("estimate-exponent", "crossing-time exponent and comparison report")
    s.add_argument("--gamma", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--scales", type=_ints, help="comma-separated r values")
    s.add_argument("--replicas", type=int)
    s.add_argument("--paths", type=int)

    s = add("validate-suite", "run the acceptance checks")
    s.add_argument("level", nargs="?", choices=("quick", "full"), default=None, help="default quick")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = getattr(args, "config", None)
    base = RunConfig.load(config).to_dict() if config else {}
    base["experiment"] = args.command
    skip = {"command", "config"}
    for key, val in vars(args).items():
        if key in skip or val is None:
            continue
        if key == "mode":
            val = val.replace("-", "_")
        base[key] = val
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args).validate()
        manifest = run_experiment(cfg)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{cfg.experiment}: {manifest.status} ({manifest.wall_time:.1f}s) -> {cfg.out}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
