"""Command-line front end.

    adjointnet simulate   --config run.json [--out DIR] [--seed N]
    adjointnet invert     --config run.json [--out DIR] [--seed N] [--method adjoint|perturbation]
    adjointnet assimilate --config run.json ...
    adjointnet gradcheck  --config run.json ...
    adjointnet preset homog|assim|hetero|cavity [--out DIR] [--seed N] [--method ...]

Exit status is 0 only when the run finished and every artifact was written.
"""

import argparse
import dataclasses
import json
import logging
import sys

from . import config as cfgmod
from .errors import AdjointNetError, ConfigError
from .experiments import run_experiment

log = logging.getLogger("adjointnet")


def _seed(text):
    val = int(text)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def build_parser():
    ap = argparse.ArgumentParser(prog="adjointnet", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_seed, help="override the config seed")
        p.add_argument("--method", choices=("adjoint", "perturbation"),
                       help="sensitivity engine (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")

    for mode in cfgmod.MODES:
        p = sub.add_parser(mode, help=f"run a {mode} experiment from a JSON config")
        p.add_argument("--config", required=True, help="experiment JSON file")
        common(p)
    p = sub.add_parser("preset", help="run one of the built-in experiments")
    p.add_argument("name", choices=cfgmod.PRESETS)
    p.add_argument("--config", help="ignored if given with a preset name; kept for symmetry")
    common(p)
    return ap


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.method is not None:
        changes["training"] = {**cfg.training, "method": args.method}
    if not changes:
        return cfg
    # re-validate so an override cannot produce an inconsistent config
    return cfgmod.validate({**cfg.to_dict(), **changes})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            cfg = cfgmod.load_preset(args.name)
            preset = args.name
        else:
            cfg = cfgmod.load_config(args.config)
            if cfg.mode != args.command:
                raise ConfigError(f"config mode is '{cfg.mode}' but the subcommand is "
                                  f"'{args.command}'", key="mode")
            preset = None
        cfg = _apply_overrides(cfg, args)
        if args.out:
            cfg = dataclasses.replace(cfg, output_dir=args.out)
        summary = run_experiment(cfg, cfg.output_dir, preset).summary
    except (AdjointNetError, OSError) as exc:
        print(f"adjointnet: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    brief = {k: summary[k] for k in ("truth", "estimate", "relative_error") if k in summary}
    print(json.dumps({"output_dir": cfg.output_dir, **brief}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
