"""Command line driver: ``fairkernel {run,sweep-alpha,sweep-nystroem,inspect-transform}``.

Results go to ``--output`` as JSON plus a flat CSV. On failure the process
prints a JSON error object to stderr and exits nonzero (2 for invalid input,
1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import kfold
from .decomposition import FairTransform, decompose
from .exceptions import FairKernelError, ValidationError
from .experiments import (
    ExperimentConfig,
    emit_results,
    load_dataset,
    run_experiment,
    sweep_alpha_tilde,
    sweep_nystroem,
)
from .kernels import rbf_kernel


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairkernel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", type=Path, required=needs_config,
                       help="experiment configuration (JSON)")
        p.add_argument("--output", type=Path,
                       help="output directory (default: the config's output_path, "
                            "else ./results)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=_positive_int, default=1,
                       help="folds evaluated in parallel")
        p.add_argument("--timings", action="store_true",
                       help="include wall-clock timings in the JSON output")

    common(sub.add_parser("run", help="cross-validated sweep over m"))
    p = sub.add_parser("sweep-alpha", help="repeat the run for several alpha_tilde values")
    common(p)
    p.add_argument("--values", type=_floats, required=True,
                   help="comma-separated alpha_tilde values")
    p = sub.add_parser("sweep-nystroem", help="landmark fractions against the exact inverse")
    common(p)
    p.add_argument("--fractions", type=_floats, required=True,
                   help="comma-separated landmark fractions in (0, 1]")
    p = sub.add_parser("inspect-transform",
                       help="summarize a saved transform, or build one from a config")
    common(p, needs_config=False)
    p.add_argument("--transform", type=Path, help="saved transform file to summarize")
    p.add_argument("--m", type=int, help="iterations when building (default: largest m)")
    return parser


def _config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.output is None:
        args.output = Path(config.output_path or "results")
    return config


def summarize_transform(T: FairTransform) -> dict:
    head = T.header()
    head.pop("protected_mean", None)
    head.pop("protected_std", None)
    dense = T.dense()
    head["distance_from_identity"] = float(np.linalg.norm(dense - np.eye(T.n)))
    return head


def _inspect(args) -> dict:
    if args.transform is not None:
        return summarize_transform(FairTransform.load(args.transform))
    if args.config is None:
        raise ValidationError("inspect-transform needs --transform or --config")
    config = _config(args)
    data = load_dataset(config)
    train, _ = kfold(data.n, config.k, config.seed).split(0)
    X = data.X_raw[train]
    std = X.std(axis=0)
    X = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    m = max(config.m_values) if args.m is None else args.m
    _, T = decompose(rbf_kernel(X, config.gamma), data.P[train], m,
                     config.effective_alpha_tilde)
    args.output.mkdir(parents=True, exist_ok=True)
    path = args.output / "transform.fkt"
    T.save(path)
    out = summarize_transform(T)
    out["path"] = str(path)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect-transform":
            summary = _inspect(args)
        else:
            config = _config(args)
            if args.command == "run":
                result, stem = run_experiment(config, args.threads), "results"
            elif args.command == "sweep-alpha":
                result, stem = sweep_alpha_tilde(config, args.values, args.threads), "sweep_alpha"
            else:
                result, stem = (sweep_nystroem(config, args.fractions, args.threads),
                                "sweep_nystroem")
            paths = emit_results(result, args.output, stem, include_runtime=args.timings)
            summary = {"outputs": [str(p) for p in paths]}
            if getattr(result, "warnings", None):
                summary["warnings"] = len(result.warnings)
    except FairKernelError as exc:
        print(json.dumps({"error": exc.to_dict()}), file=sys.stderr)
        return 2 if isinstance(exc, ValidationError) else 1
    except OSError as exc:
        print(json.dumps({"error": {"code": "io_error", "message": str(exc)}}), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
