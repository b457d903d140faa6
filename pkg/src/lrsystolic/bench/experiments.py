"""Monte-Carlo experiments behind the CLI subcommands.

Every experiment draws trial ``i`` from ``trial_rng(seed, i, stream)`` so the
results do not depend on chunking or worker count, and every aggregate is a
plain sum over trials.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..detection import (
    DetectorKind,
    QamConstellation,
    complex_normal,
    extended_channel,
    extended_received,
    lattice_received,
    lr_detect_batch,
    ml_detect_batch,
    mmse_detect_batch,
    reduce_stack,
    sigma2_from_ebn0,
    zf_detect_batch,
)
from ..linalg import QRFactors, permutation_matrix, qr_batch, sorted_qr
from ..reduction import Algorithm, Condition, ReductionParams, defect_from_r, reduce
from ..systolic import (
    column_op_start,
    column_ops_end,
    full_size_reduction_end,
    init_array,
    reduce_on_array,
    run_full_size_reduction,
    sequential_size_reduction_cost,
)
from .config import ExperimentConfig
from .rng import trial_rng
from .stats import BINOMIAL_METHOD, MEAN_METHOD, clopper_pearson, empirical_cdf, ks_distance, t_interval

CHUNK = 2000

# stream ids keep the experiments' draws apart for the same seed
BER_STREAM = 0
DEFECT_STREAM = 1
SCALING_STREAM = 2  # plus m
TIMING_STREAM = 3


@dataclass(frozen=True)
class Variant:
    """One reduction setting in a sweep."""

    algorithm: Algorithm
    delta: float
    condition: Condition

    @property
    def params(self) -> ReductionParams:
        return ReductionParams(self.algorithm, self.delta, self.condition)

    @property
    def name(self) -> str:
        return self.algorithm.value


def variant(algorithm, delta, condition=None) -> Variant:
    p = ReductionParams(Algorithm(algorithm), delta, condition)
    return Variant(p.algorithm, p.delta, p.condition)


def _config_variants(cfg: ExperimentConfig) -> list:
    return [variant(a, cfg.delta, cfg.condition) for a in cfg.algorithms]


def eb_sigma2(eb_n0_db: float, m: int, order: int) -> float:
    return 0.0 if math.isinf(eb_n0_db) else sigma2_from_ebn0(eb_n0_db, m, order)


# ---------------------------------------------------------------- BER

def _ber_draws(cfg: ExperimentConfig, indices):
    n, m = cfg.receive, cfg.m
    bps = int(round(math.log2(cfg.qam_order)))
    hs, bits, ws = [], [], []
    for idx in indices:
        rng = trial_rng(cfg.seed, int(idx), BER_STREAM)
        hs.append(complex_normal(rng, (n, m)))
        bits.append(rng.integers(0, 2, size=(m, bps)))
        ws.append(complex_normal(rng, (n,)))
    return np.array(hs), np.array(bits), np.array(ws)


def ber_keys(cfg: ExperimentConfig) -> list:
    """(detector, variant or None) pairs in output order."""
    keys = []
    for d in cfg.detectors:
        kind = DetectorKind(d)
        if kind.lattice_reduced:
            keys.extend((kind, v) for v in _config_variants(cfg))
        else:
            keys.append((kind, None))
    return keys


def _ber_chunk(args):
    cfg, start, stop = args
    const = QamConstellation(cfg.qam_order)
    h, bits, w = _ber_draws(cfg, range(start, stop))
    x = const.modulate(bits)
    m = cfg.m
    keys = ber_keys(cfg)
    errors = {}
    zf_cache = {}
    for e, eb in enumerate(cfg.eb_n0_db_grid):
        s2 = eb_sigma2(eb, m, cfg.qam_order)
        y = np.einsum("bij,bj->bi", h, x) + math.sqrt(s2) * w
        mmse_cache = {}
        for kind, var in keys:
            if kind is DetectorKind.ZF:
                xhat = zf_detect_batch(h, y, const)
            elif kind is DetectorKind.MMSE:
                xhat = mmse_detect_batch(h, y, s2, const)
            elif kind is DetectorKind.ML:
                xhat = ml_detect_batch(h, y, const)
            else:
                mmse = kind.uses_mmse and s2 > 0
                cache = mmse_cache if mmse else zf_cache
                if var not in cache:
                    h_eff = extended_channel(h, s2) if mmse else h
                    cache[var] = (h_eff, reduce_stack(h_eff, var.params, cfg.qrd))
                h_eff, reduced = cache[var]
                y_eff = extended_received(y, m) if mmse else y
                xhat = lr_detect_batch(reduced, lattice_received(h_eff, y_eff, const), const, kind.sic)
            wrong = int(np.count_nonzero(const.demodulate(xhat) != bits))
            errors[(e, kind, var)] = errors.get((e, kind, var), 0) + wrong
    return errors


def _chunks(total: int, size: int = CHUNK):
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def _map(cfg: ExperimentConfig, fn, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


BER_COLUMNS = ["detector", "algorithm", "condition", "delta", "eb_n0_db", "trials", "bits",
               "bit_errors", "ber", "ci_low", "ci_high", "ci_half_width"]


def run_ber(cfg: ExperimentConfig) -> list:
    """One row per (detector, reduction variant, Eb/N0) with a Clopper-Pearson interval."""
    if cfg.trials == 0:
        return []
    jobs = [(cfg, a, b) for a, b in _chunks(cfg.trials)]
    totals: dict = {}
    for part in _map(cfg, _ber_chunk, jobs):
        for k, v in part.items():
            totals[k] = totals.get(k, 0) + v
    bits = cfg.trials * cfg.m * int(round(math.log2(cfg.qam_order)))
    rows = []
    for kind, var in ber_keys(cfg):
        for e, eb in enumerate(cfg.eb_n0_db_grid):
            err = totals[(e, kind, var)]
            ci = clopper_pearson(err, bits)
            rows.append({
                "detector": kind.value,
                "algorithm": var.name if var else "",
                "condition": var.condition.value if var else "",
                "delta": var.delta if var else None,
                "eb_n0_db": eb, "trials": cfg.trials, "bits": bits, "bit_errors": err,
                "ber": ci.estimate, "ci_low": ci.low, "ci_high": ci.high,
                "ci_half_width": ci.half_width,
            })
    return rows


def ber_meta(cfg: ExperimentConfig) -> dict:
    return {"ci_method": BINOMIAL_METHOD, "trials_per_point": cfg.trials,
            "model": f"{cfg.receive}x{cfg.m} Rayleigh, {cfg.qam_order}-QAM Gray, qrd={cfg.qrd}"}


# --------------------------------------------------------- swaps / flops

def scaling_variants(cfg: ExperimentConfig) -> list:
    out = [variant(a, cfg.delta, cfg.condition) for a in cfg.algorithms if a != "clll"]
    out.extend(variant("clll", d) for d in cfg.clll_deltas)
    return out


def _scaling_channels(cfg: ExperimentConfig, m: int, start: int, stop: int) -> np.ndarray:
    return np.array([complex_normal(trial_rng(cfg.seed, i, SCALING_STREAM + m), (m, m))
                     for i in range(start, stop)])


def _scaling_chunk(args):
    cfg, m, start, stop, identity = args
    if identity:
        h = np.broadcast_to(np.eye(m, dtype=np.complex128), (stop - start, m, m)).copy()
    else:
        h = _scaling_channels(cfg, m, start, stop)
    s2 = eb_sigma2(cfg.scaling_eb_n0_db, m, cfg.qam_order)
    h_eff = extended_channel(h, s2)
    if cfg.qrd == "qrd":
        q_h, r = qr_batch(h_eff)
        factors = [(QRFactors(q_h[b], r[b]), None) for b in range(len(r))]
    else:
        factors = []
        for hb in h_eff:
            qr, perm = sorted_qr(hb)
            factors.append((qr, permutation_matrix(perm)))
    out = {}
    for var in scaling_variants(cfg):
        swaps, rounds, flops = [], [], []
        for qr, t0 in factors:
            st = reduce(qr, var.params, t0).stats
            swaps.append(st.column_swaps)
            rounds.append(st.parallel_swap_rounds)
            flops.append(st.flops)
        out[var] = (swaps, rounds, flops)
    return out


def run_scaling(cfg: ExperimentConfig, identity: bool = False) -> dict:
    """Per (m, variant): lists of column swaps, swap rounds and flops over ``trials`` channels.

    Channels are ``m x m`` at ``scaling_eb_n0_db`` and the extended MMSE
    matrix is what gets reduced. ``identity`` replaces the channels with the
    identity for a synthetic no-work check.
    """
    results = {}
    for m in cfg.m_grid:
        jobs = [(cfg, m, a, b, identity) for a, b in _chunks(cfg.trials)]
        merged: dict = {}
        for part in _map(cfg, _scaling_chunk, jobs):
            for var, lists in part.items():
                acc = merged.setdefault(var, ([], [], []))
                for dst, src in zip(acc, lists):
                    dst.extend(src)
        for var in scaling_variants(cfg):
            results[(m, var)] = merged.get(var, ([], [], []))
    return results


SWAP_COLUMNS = ["m", "algorithm", "condition", "delta", "trials",
                "mean_column_swaps", "column_swaps_ci_half_width",
                "mean_swap_rounds", "swap_rounds_ci_half_width"]
FLOP_COLUMNS = ["m", "algorithm", "condition", "delta", "trials", "mean_flops", "flops_ci_low",
                "flops_ci_high", "flops_ci_half_width"]


def swap_rows(cfg: ExperimentConfig, results: dict) -> list:
    rows = []
    for (m, var), (swaps, rounds, _) in results.items():
        s, r = t_interval(swaps), t_interval(rounds)
        rows.append({"m": m, "algorithm": var.name, "condition": var.condition.value,
                     "delta": var.delta, "trials": len(swaps),
                     "mean_column_swaps": s.estimate, "column_swaps_ci_half_width": s.half_width,
                     "mean_swap_rounds": r.estimate, "swap_rounds_ci_half_width": r.half_width})
    return rows


def flop_rows(cfg: ExperimentConfig, results: dict) -> list:
    rows = []
    for (m, var), (_, _, flops) in results.items():
        f = t_interval(flops)
        rows.append({"m": m, "algorithm": var.name, "condition": var.condition.value,
                     "delta": var.delta, "trials": len(flops), "mean_flops": f.estimate,
                     "flops_ci_low": f.low, "flops_ci_high": f.high, "flops_ci_half_width": f.half_width})
    return rows


def scaling_meta(cfg: ExperimentConfig) -> dict:
    return {"ci_method": MEAN_METHOD, "trials_per_m": cfg.trials,
            "reduced_matrix": f"extended MMSE [H; sigma I] at Eb/N0 = {cfg.scaling_eb_n0_db} dB, "
                              f"{cfg.qam_order}-QAM, qrd={cfg.qrd}",
            "swap_rounds": "swaps executed together in one round count once",
            "flops": "complex mul 6, complex add 2, real-by-complex 2, |z|^2 3, real op 1; QR excluded"}


# ------------------------------------------------------------ defect CDF

def defect_variants(cfg: ExperimentConfig) -> list:
    out = []
    for d in cfg.deltas:
        out.append(variant("fsr", d))
        out.append(variant("aslr", d))
        out.append(variant("clll", d))
    return out


def _defect_chunk(args):
    cfg, start, stop = args
    n, m = cfg.receive, cfg.m
    h = np.array([complex_normal(trial_rng(cfg.seed, i, DEFECT_STREAM), (n, m))
                  for i in range(start, stop)])
    q_h, r = qr_batch(h)
    out = {"none": [defect_from_r(rb) for rb in r]}
    for var in defect_variants(cfg):
        out[var] = [defect_from_r(reduce(QRFactors(q_h[b], r[b]), var.params).r)
                    for b in range(len(r))]
    return out


def run_defects(cfg: ExperimentConfig) -> dict:
    """Orthogonality defects of ``trials`` raw channels, unreduced and per variant."""
    merged: dict = {}
    for part in _map(cfg, _defect_chunk, [(cfg, a, b) for a, b in _chunks(cfg.trials)]):
        for k, v in part.items():
            merged.setdefault(k, []).extend(v)
    return merged


DEFECT_COLUMNS = ["algorithm", "condition", "delta", "defect", "ecdf"]


def defect_rows(defects: dict) -> list:
    rows = []
    for key, samples in defects.items():
        if not samples:
            continue
        x, f = empirical_cdf(samples)
        name, cond, delta = ("none", "", None) if key == "none" else \
            (key.name, key.condition.value, key.delta)
        rows.extend({"algorithm": name, "condition": cond, "delta": delta,
                     "defect": float(a), "ecdf": float(b)} for a, b in zip(x, f))
    return rows


def defect_ks(cfg: ExperimentConfig, defects: dict) -> dict:
    """KS distances: FSR vs ASLR at each delta, and FSR(0.99) vs CLLL(0.75) when both exist."""
    out = {}
    for d in cfg.deltas:
        a, b = defects.get(variant("fsr", d), []), defects.get(variant("aslr", d), [])
        if a and b:
            out[f"fsr_vs_aslr_delta_{d}"] = ks_distance(a, b)
    fsr99, clll75 = defects.get(variant("fsr", 0.99), []), defects.get(variant("clll", 0.75), [])
    if fsr99 and clll75:
        out["fsr_0.99_vs_clll_0.75"] = ks_distance(fsr99, clll75)
    return out


# ---------------------------------------------------------------- timing

TIMING_COLUMNS = ["m", "sim_full_size_reduction_end", "closed_form_end", "op_starts_match",
                  "column_ends_match", "sequential_cycles", "trials", "fsr_mean_cycles",
                  "fsr_cycles_ci_half_width", "aslr_mean_cycles", "aslr_cycles_ci_half_width"]


def run_timing(cfg: ExperimentConfig) -> list:
    """Array cycle counts against the closed forms, plus mean total cycles per reduction."""
    rows = []
    for m in cfg.m_grid:
        rng = trial_rng(cfg.seed, m, TIMING_STREAM)
        h = complex_normal(rng, (m, m))
        q_h, r = qr_batch(h[None])
        _, tm = run_full_size_reduction(init_array(QRFactors(q_h[0], r[0])))
        row = {
            "m": m,
            "sim_full_size_reduction_end": tm.end,
            "closed_form_end": full_size_reduction_end(m),
            "op_starts_match": tm.op_start == {(i, j): column_op_start(m, i, j)
                                               for j in range(2, m + 1) for i in range(1, j)},
            "column_ends_match": tm.column_end == {j: column_ops_end(m, j) for j in range(2, m + 1)},
            "sequential_cycles": sequential_size_reduction_cost(m) if m >= 3 else None,
            "trials": cfg.trials,
        }
        if cfg.trials > 0:
            s2 = eb_sigma2(cfg.scaling_eb_n0_db, m, cfg.qam_order)
            hs = np.array([complex_normal(trial_rng(cfg.seed, i, SCALING_STREAM + m), (m, m))
                           for i in range(cfg.trials)])
            qh, rr = qr_batch(extended_channel(hs, s2))
            for name in ("fsr", "aslr"):
                params = ReductionParams(Algorithm(name), cfg.delta)
                cycles = [reduce_on_array(QRFactors(qh[b], rr[b]), params).total_cycles
                          for b in range(cfg.trials)]
                ci = t_interval(cycles)
                row[f"{name}_mean_cycles"] = ci.estimate
                row[f"{name}_cycles_ci_half_width"] = ci.half_width
        rows.append(row)
    return rows


def timing_meta(cfg: ExperimentConfig) -> dict:
    return {"ci_method": MEAN_METHOD, "trials_per_m": cfg.trials,
            "closed_forms": "op (i,j) starts at m+j-2i; column j ends at 2m+j-3; pass ends at 3m-3",
            "sequential_cycles": "sum over j=3..m of (2m+j-3)",
            "cycle_origin": "cycle 0 is the first firing of the last diagonal cell"}
