"""Command-line entry point.

Four subcommands share the flags --config, --out, --preset, --seed:

    solve-ehjb    train the value network, write checkpoint and errors
    run-langevin  simulate trajectories from a checkpoint
    fd-reference  1-d upwind policy-iteration reference profile
    sweep         repeat the pipeline over one parameter's values

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import PRESETS, load_config, resolve
from .exceptions import ConfigError, NumericalError
from .runner import fd_run, langevin_run, solve_run, sweep_run


def _common(sub):
    sub.add_argument("--config", required=True, help="path to a JSON experiment config")
    sub.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    sub.add_argument("--preset", choices=sorted(PRESETS), default=None,
                     help="training preset override")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the train and langevin seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjbopt",
        description="learned state-dependent Langevin noise for global minimization")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve-ehjb", help="train the value network")
    _common(s)

    s = sub.add_parser("run-langevin", help="simulate mirrored Langevin trajectories")
    _common(s)
    s.add_argument("--checkpoint", required=True, help="checkpoint from a solve-ehjb run")

    s = sub.add_parser("fd-reference", help="1-d policy-iteration reference solve")
    _common(s)

    s = sub.add_parser("sweep", help="run the pipeline over a list of parameter values")
    _common(s)
    s.add_argument("--param", required=True,
                   help="dotted config key to vary, e.g. problem.lambda or langevin.s")
    s.add_argument("--values", required=True,
                   help="comma-separated list of values")
    s.add_argument("--checkpoint", default=None,
                   help="reuse this network for langevin.* sweeps instead of retraining")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.apply_overrides(preset=args.preset, seed=args.seed, out=args.out)
        out_dir = cfg.output["dir"]
        if args.command == "sweep":
            try:
                values = [float(v) for v in args.values.split(",") if v.strip() != ""]
            except ValueError as e:
                raise ConfigError(f"bad --values list: {e}") from None
            sweep_run(cfg, out_dir, args.param, values, checkpoint_path=args.checkpoint)
        else:
            res = resolve(cfg)
            if args.command == "solve-ehjb":
                solve_run(res, out_dir)
            elif args.command == "run-langevin":
                langevin_run(res, out_dir, args.checkpoint)
            elif args.command == "fd-reference":
                fd_run(res, out_dir)
    except ConfigError as e:
        print(f"hjbopt: configuration error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"hjbopt: numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
