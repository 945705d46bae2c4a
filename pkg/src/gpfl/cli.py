"""``gpfl`` command line.

    gpfl generate-data|train|evaluate|track|components --config PATH [--seed N] [--out DIR]

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 divergence or
degradation detected during tracking.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .errors import (
    ControllerFaultError, DivergenceError, IllConditionedKernelError, InvalidInputError,
    OptimizationFailedError, SingularDynamicsError,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4

log = logging.getLogger("gpfl")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpfl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate-data": "simulate PD tracking of filtered noise and write train/test datasets",
        "train": "optimize hyperparameters and fit one GP per joint",
        "evaluate": "per-joint nMSE and absolute-error quantiles on the test set",
        "track": "closed-loop tracking with the configured controller",
        "components": "dump estimated gravity, inertia and bias terms next to the true ones",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="override the output directory")
        p.add_argument("--kernel", choices=experiment.KERNELS, default=None, help="override the kernel kind")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--dataset", type=Path, default=None, help="evaluate on this CSV instead")
        if name == "components":
            p.add_argument("--grid", type=int, default=5, help="configurations per joint axis")
    return parser


def load_config(args) -> experiment.ExperimentConfig:
    config = experiment.ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if args.kernel is not None:
        config.kernel = args.kernel
    config.validate()
    return config


def _grid(n, count, span=1.0):
    axes = [np.linspace(-span, span, count)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def run(args) -> int:
    config = load_config(args)
    if args.command == "generate-data":
        written = experiment.cmd_generate_data(config)
        for split, info in written.items():
            print(f"{split}: {info['rows']} rows -> {info['path']}")
    elif args.command == "train":
        path = experiment.cmd_train(config)
        print(f"model -> {path}")
    elif args.command == "evaluate":
        path = experiment.cmd_evaluate(config, args.dataset)
        print(path.read_text(), end="")
    elif args.command == "components":
        n = config.robot_model().n
        path = experiment.cmd_components(config, _grid(n, args.grid))
        print(f"components -> {path}")
    elif args.command == "track":
        result = experiment.cmd_track(config)
        print(json.dumps(result.summary, indent=1, sort_keys=True))
        if result.failed:
            what = "diverged" if result.diverged else f"degraded at t = {result.degraded_at:.3f} s"
            print(f"tracking {what}", file=sys.stderr)
            return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (DivergenceError, ControllerFaultError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IllConditionedKernelError, OptimizationFailedError, SingularDynamicsError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, OSError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
