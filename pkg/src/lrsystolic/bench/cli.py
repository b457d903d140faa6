"""``lrsystolic`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..detection import complex_normal
from ..errors import (
    ConfigError,
    DegenerateRotation,
    IterationLimit,
    LatticeError,
    NonInteger,
    ProtocolViolation,
    RankDeficient,
    SearchSpaceTooLarge,
    ShapeMismatch,
    ZeroDiagonal,
)
from ..linalg import qr_givens
from ..reduction import Algorithm, ReductionParams, reduce_channel
from ..systolic import init_array, run_reduction
from . import experiments as ex
from .config import FULL_M_GRID, ExperimentConfig
from .csvio import render_csv
from .rng import trial_rng

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (RankDeficient, ZeroDiagonal, DegenerateRotation, IterationLimit, NonInteger,
                  ProtocolViolation)


def read_matrix(path) -> np.ndarray:
    """Text format: a header ``m n``, then n rows each holding m ``re im`` pairs."""
    try:
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        m, n = int(tokens[0]), int(tokens[1])
        vals = [float(t) for t in tokens[2:]]
    except (IndexError, ValueError):
        raise ConfigError(f"{path}: expected header 'm n' followed by numbers") from None
    if m < 1 or n < 1 or len(vals) != 2 * m * n:
        raise ConfigError(f"{path}: expected {2 * m * n} values after the header, got {len(vals)}")
    a = np.array(vals).reshape(n, m, 2)
    return a[..., 0] + 1j * a[..., 1]


def _pairs(a: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for name in ("seed", "delta", "condition", "qrd", "trials", "out"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "algorithm", None):
        changes["algorithms"] = [args.algorithm]
    if getattr(args, "full_scale", False):
        changes["m_grid"] = list(FULL_M_GRID)
    return cfg.replace(**changes) if changes else cfg


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _meta(cfg: ExperimentConfig, extra: dict) -> dict:
    return {"config_sha256": cfg.digest(), **extra}


def _reduction_params(args) -> ReductionParams:
    alg = Algorithm(args.algorithm or "fsr")
    try:
        params = ReductionParams(alg, args.delta if args.delta is not None else 0.99, args.condition)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if alg is not Algorithm.CLLL and params.condition.value == "lovasz":
        raise ConfigError(f"{alg.value} runs with the Siegel condition; lovasz is only valid with clll")
    return params


def _input_matrix(args) -> np.ndarray:
    if args.matrix:
        return read_matrix(args.matrix)
    m = args.random
    if m is None or m < 1:
        raise ConfigError("give a matrix file or --random M")
    seed = args.seed if args.seed is not None else 0
    return complex_normal(trial_rng(seed, 0, 99), (m, m))


def cmd_reduce(args) -> int:
    params = _reduction_params(args)
    h = _input_matrix(args)
    out = reduce_channel(h, params, args.qrd or "qrd")
    doc = {
        "algorithm": params.algorithm.value, "condition": params.condition.value,
        "delta": params.delta, "qrd": args.qrd or "qrd", "converged": out.converged,
        "stats": out.stats.as_dict(), "r": _pairs(out.r), "q_h": _pairs(out.q_h), "t": _pairs(out.t),
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_ber(args) -> int:
    cfg = _build_config(args)
    rows = ex.run_ber(cfg)
    _emit(render_csv(ex.BER_COLUMNS, rows, _meta(cfg, ex.ber_meta(cfg))), cfg.out)
    return EXIT_OK


def _scaling(args, columns, row_fn):
    cfg = _build_config(args)
    results = ex.run_scaling(cfg)
    _emit(render_csv(columns, row_fn(cfg, results), _meta(cfg, ex.scaling_meta(cfg))), cfg.out)
    return EXIT_OK


def cmd_swaps(args) -> int:
    return _scaling(args, ex.SWAP_COLUMNS, ex.swap_rows)


def cmd_flops(args) -> int:
    return _scaling(args, ex.FLOP_COLUMNS, ex.flop_rows)


def cmd_defect_cdf(args) -> int:
    cfg = _build_config(args)
    defects = ex.run_defects(cfg)
    ks = ex.defect_ks(cfg, defects)
    meta = {"samples_per_curve": cfg.trials, "matrix": f"raw {cfg.receive}x{cfg.m} Rayleigh",
            "distance_method": "two-sample Kolmogorov-Smirnov",
            **{f"ks_{k}": f"{v:.6f}" for k, v in ks.items()}}
    _emit(render_csv(ex.DEFECT_COLUMNS, ex.defect_rows(defects), _meta(cfg, meta)), cfg.out)
    return EXIT_OK


def cmd_timing(args) -> int:
    cfg = _build_config(args)
    rows = ex.run_timing(cfg)
    _emit(render_csv(ex.TIMING_COLUMNS, rows, _meta(cfg, ex.timing_meta(cfg))), cfg.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = _reduction_params(args)
    if params.algorithm is Algorithm.CLLL:
        raise ConfigError("the array runs fsr or aslr")
    h = _input_matrix(args)
    state = init_array(qr_givens(h), log=True)
    run = run_reduction(state, params, strict=args.strict)
    _emit(run.log.to_jsonl(), args.out)
    sys.stderr.write(f"total cycles {run.total_cycles}, swaps {run.outcome.stats.column_swaps}, "
                     f"passes {run.outcome.stats.iterations}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrsystolic",
                                description="Lattice reduction, LR-aided detection and array simulation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, experiment=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--algorithm", choices=[a.value for a in Algorithm])
        sp.add_argument("--condition", choices=["lovasz", "siegel"])
        sp.add_argument("--delta", type=float)
        sp.add_argument("--qrd", choices=["qrd", "sqrd"])
        sp.add_argument("--out", help="output path (default: stdout)")
        if experiment:
            sp.add_argument("--config", help="JSON experiment configuration")
            sp.add_argument("--trials", type=int)
            sp.add_argument("--full-scale", action="store_true",
                            help="sweep m over 4..16 instead of the desk default")

    for name, fn, doc in [
        ("ber", cmd_ber, "bit error rate per detector and Eb/N0"),
        ("swaps", cmd_swaps, "mean column swaps and swap rounds versus m"),
        ("flops", cmd_flops, "mean flop counts versus m"),
        ("defect-cdf", cmd_defect_cdf, "orthogonality-defect samples and empirical CDFs"),
        ("timing", cmd_timing, "array cycle counts versus closed forms"),
    ]:
        sp = sub.add_parser(name, help=doc)
        common(sp)
        sp.set_defaults(func=fn)

    for name, fn, doc in [("reduce", cmd_reduce, "reduce one matrix and print JSON"),
                          ("simulate", cmd_simulate, "run the array on one matrix, dump the cycle log")]:
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("matrix", nargs="?", help="matrix file: 'm n' header then n rows of m 're im' pairs")
        sp.add_argument("--random", type=int, metavar="M", help="use a seeded random M x M matrix")
        common(sp, experiment=False)
        if name == "simulate":
            sp.add_argument("--strict", action="store_true",
                            help="hold rotations until size reduction has finished")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeMismatch, SearchSpaceTooLarge) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERIC
    except LatticeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
