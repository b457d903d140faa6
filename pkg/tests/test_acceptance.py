"""Full-size acceptance runs. All Monte-Carlo work uses seed 12345."""

import itertools
import time

import numpy as np
import pytest

from lrsystolic.bench import experiments as ex
from lrsystolic.bench.config import ExperimentConfig
from lrsystolic.detection import (
    QamConstellation,
    back_substitute,
    complex_normal,
    extended_channel,
    lattice_received,
    lr_detect_batch,
    ml_detect_batch,
    mmse_detect_batch,
    mmse_equalize_batch,
    stack_outcomes,
    zf_detect_batch,
)
from lrsystolic.linalg import QRFactors, det_gaussian_integer, frobenius_norm, hermitian, qr_givens
from lrsystolic.reduction import (
    Algorithm,
    Condition,
    ReductionParams,
    ReductionState,
    defect_bound,
    defect_from_r,
    full_size_reduction,
    is_size_reduced,
    reduce,
    reduce_channel,
    swap_condition_holds,
)
from lrsystolic.systolic import (
    init_array,
    reduce_on_array,
    run_full_size_reduction,
    sequential_size_reduction_cost,
)

SEED = 12345
pytestmark = pytest.mark.acceptance


def rng_for(tag):
    return np.random.default_rng([SEED, tag])


@pytest.mark.criterion(1, "reduction outputs are size reduced, condition-satisfying, exact")
def test_reduction_correctness(record_property):
    rng = rng_for(1)
    t0 = time.perf_counter()
    bad = 0
    for m in (4, 8):
        hs = complex_normal(rng, (1000, m, m))
        for alg in Algorithm:
            params = ReductionParams(alg, 0.99)
            for h in hs:
                out = reduce_channel(h, params)
                ok = (is_size_reduced(out.r)
                      and all(swap_condition_holds(out.r, k, params) for k in range(1, m))
                      and frobenius_norm(hermitian(out.q_h) @ out.r - h @ out.t)
                      <= 1e-8 * frobenius_norm(h)
                      and abs(det_gaussian_integer(out.t)) == 1)
                bad += not ok
    elapsed = time.perf_counter() - t0
    record_property("violations", bad)
    record_property("runtime_s", round(elapsed, 1))
    assert bad == 0
    assert elapsed < 60


@pytest.mark.criterion(2, "Lovasz holding implies Siegel holding")
def test_lovasz_implies_siegel(record_property):
    rng = rng_for(2)
    violations = checks = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 9))
        r = np.triu(complex_normal(rng, (m, m)))
        r[np.diag_indices(m)] = np.abs(complex_normal(rng, (m,))) + 1e-3
        r = full_size_reduction(ReductionState.from_qr(QRFactors(np.eye(m), r))).r
        for delta in (0.51, 0.75, 0.99):
            lov = ReductionParams(Algorithm.CLLL, delta, Condition.LOVASZ)
            sie = ReductionParams(Algorithm.CLLL, delta, Condition.SIEGEL)
            for k in range(1, m):
                if swap_condition_holds(r, k, lov):
                    checks += 1
                    violations += not swap_condition_holds(r, k, sie)
    record_property("lovasz_holding_checks", checks)
    record_property("violations", violations)
    assert checks > 0 and violations == 0


@pytest.mark.criterion(3, "orthogonality defect below the closed-form bound")
def test_defect_bound(record_property):
    rng = rng_for(3)
    violations = 0
    worst = 0.0
    for m in (2, 4, 8):
        hs = complex_normal(rng, (10_000, m, m))
        for delta in (0.75, 0.99):
            bound = defect_bound(m, delta)
            for alg in Algorithm:
                params = ReductionParams(alg, delta)
                for h in hs:
                    kappa = defect_from_r(reduce_channel(h, params).r)
                    worst = max(worst, kappa / bound)
                    violations += kappa > bound
    record_property("violations", violations)
    record_property("max_defect_over_bound", f"{worst:.3e}")
    assert violations == 0


@pytest.mark.criterion(4, "array result equals the sequential reducers")
def test_array_matches_sequential(record_property):
    rng = rng_for(4)
    mismatches = 0
    worst = 0.0
    hs = complex_normal(rng, (1000, 4, 4))
    for alg in (Algorithm.FSR_LLL, Algorithm.ASLR):
        params = ReductionParams(alg, 0.99)
        for h in hs:
            qr = qr_givens(h)
            ref = reduce(qr, params)
            got = reduce_on_array(qr, params).outcome
            diff = max(np.max(np.abs(got.r - ref.r)), np.max(np.abs(got.q_h - ref.q_h)),
                       np.max(np.abs(got.t - ref.t)))
            worst = max(worst, diff)
            mismatches += diff > 1e-9
    record_property("mismatches", mismatches)
    record_property("max_abs_diff", f"{worst:.2e}")
    assert mismatches == 0


@pytest.mark.criterion(5, "full-size-reduction cycle counts match the closed forms")
def test_timing_closed_forms(record_property):
    rng = rng_for(5)
    failures = []
    for m in range(3, 13):
        _, tm = run_full_size_reduction(init_array(qr_givens(complex_normal(rng, (m, m)))))
        starts = {(i, j): m + j - 2 * i for j in range(2, m + 1) for i in range(1, j)}
        ends = {j: 2 * m + j - 3 for j in range(2, m + 1)}
        if tm.op_start != starts or tm.column_end != ends or tm.end != 3 * m - 3:
            failures.append(m)
    record_property("failing_m", failures)
    record_property("sequential_cost_m4", sequential_size_reduction_cost(4))
    assert failures == []
    assert sequential_size_reduction_cost(4) == 17


def _by(rows, detector, algorithm=""):
    return {r["eb_n0_db"]: r for r in rows if r["detector"] == detector and r["algorithm"] == algorithm}


@pytest.mark.criterion(6, "LR-MMSE BER with FSR and ASLR agree and sit between MMSE and ML")
def test_ber_fsr_aslr(record_property):
    cfg = ExperimentConfig(m=4, qam_order=4, delta=0.99, trials=100_000, seed=SEED,
                           eb_n0_db_grid=[8.0, 12.0, 16.0], algorithms=["fsr", "aslr"],
                           detectors=["mmse", "lr-mmse", "ml"])
    t0 = time.perf_counter()
    rows = ex.run_ber(cfg)
    elapsed = time.perf_counter() - t0
    fsr, aslr = _by(rows, "lr-mmse", "fsr"), _by(rows, "lr-mmse", "aslr")
    mmse, ml = _by(rows, "mmse"), _by(rows, "ml")
    for eb in cfg.eb_n0_db_grid:
        record_property(f"ber_{eb:g}dB", f"mmse={mmse[eb]['ber']:.3e} fsr={fsr[eb]['ber']:.3e} "
                                         f"aslr={aslr[eb]['ber']:.3e} ml={ml[eb]['ber']:.3e}")
    record_property("runtime_s", round(elapsed, 1))
    for eb in cfg.eb_n0_db_grid:
        f, a = fsr[eb], aslr[eb]
        assert a["ci_low"] <= f["ber"] <= a["ci_high"]
        assert f["ci_low"] <= a["ber"] <= f["ci_high"]
    for eb in (12.0, 16.0):
        for lr in (fsr[eb], aslr[eb]):
            assert ml[eb]["ber"] < lr["ber"] < mmse[eb]["ber"]
    assert elapsed < 600


@pytest.mark.criterion(7, "LR-MMSE-SIC with CLLL is no worse than with FSR")
def test_sic_ordering(record_property):
    cfg = ExperimentConfig(m=4, qam_order=4, delta=0.99, trials=100_000, seed=SEED,
                           eb_n0_db_grid=[14.0], algorithms=["clll", "fsr"],
                           detectors=["lr-mmse-sic"])
    rows = ex.run_ber(cfg)
    clll, fsr = _by(rows, "lr-mmse-sic", "clll")[14.0], _by(rows, "lr-mmse-sic", "fsr")[14.0]
    assert clll["condition"] == "lovasz" and fsr["condition"] == "siegel"
    record_property("ber_clll", f"{clll['ber']:.4e}")
    record_property("ber_fsr", f"{fsr['ber']:.4e} +- {fsr['ci_half_width']:.2e}")
    assert clll["ber"] <= fsr["ber"] + fsr["ci_half_width"]


def _means(results, m, name, which):
    for (mm, var), lists in results.items():
        if mm == m and var.name == name and (name != "clll" or var.delta == which[1]):
            return float(np.mean(lists[which[0]]))
    raise KeyError((m, name))


@pytest.mark.criterion(8, "ASLR swap rounds versus FSR swaps at m = 4 and m = 8")
def test_swap_round_ratio(record_property):
    cfg = ExperimentConfig(trials=1000, seed=SEED, m_grid=[4, 8], algorithms=["fsr", "aslr"],
                           clll_deltas=[], scaling_eb_n0_db=20.0)
    res = ex.run_scaling(cfg)
    ratio = {m: _means(res, m, "aslr", (1, None)) / _means(res, m, "fsr", (0, None)) for m in (4, 8)}
    record_property("ratio_m4", f"{ratio[4]:.4f} (target 0.85..1.15)")
    record_property("ratio_m8", f"{ratio[8]:.4f} (target < 0.75)")
    assert ratio[8] < 0.75
    assert 0.85 <= ratio[4] <= 1.15


@pytest.mark.criterion(9, "flop ordering at m = 10")
def test_flop_ordering(record_property):
    cfg = ExperimentConfig(trials=1000, seed=SEED, m_grid=[10], algorithms=["fsr", "aslr"],
                           clll_deltas=[0.75, 0.99], scaling_eb_n0_db=20.0)
    res = ex.run_scaling(cfg)
    f = {name: _means(res, 10, name, (2, None)) for name in ("fsr", "aslr")}
    c75 = _means(res, 10, "clll", (2, 0.75))
    c99 = _means(res, 10, "clll", (2, 0.99))
    record_property("mean_flops", f"clll0.99={c99:.0f} clll0.75={c75:.0f} "
                                  f"fsr={f['fsr']:.0f} aslr={f['aslr']:.0f}")
    record_property("max_ratio_to_clll0.99", f"{max(f.values()) / c99:.3f}")
    assert c99 > c75 > max(f.values())
    assert max(f.values()) < 0.6 * c99


@pytest.mark.criterion(10, "FSR and ASLR defect distributions overlap")
def test_defect_cdf_overlap(record_property):
    cfg = ExperimentConfig(trials=10_000, seed=SEED, deltas=[0.51, 0.75, 0.99])
    ks = ex.defect_ks(cfg, ex.run_defects(cfg))
    for d in cfg.deltas:
        record_property(f"ks_delta_{d}", f"{ks[f'fsr_vs_aslr_delta_{d}']:.4f}")
    assert all(ks[f"fsr_vs_aslr_delta_{d}"] < 0.05 for d in cfg.deltas)


@pytest.mark.criterion(11, "detector exactness and algebraic identities")
def test_detector_identities(record_property):
    const = QamConstellation(4)
    rng = rng_for(11)
    x = np.array(list(itertools.product(const.points, repeat=4)))  # all 256 vectors
    failures = 0
    for _ in range(10):
        h = complex_normal(rng, (4, 4))
        hb = np.broadcast_to(h, (len(x), 4, 4))
        y = x @ h.T
        outs = [zf_detect_batch(hb, y, const), mmse_detect_batch(hb, y, 0.0, const),
                ml_detect_batch(hb, y, const)]
        for alg in Algorithm:
            out = reduce_channel(h, ReductionParams(alg, 0.99))
            red = stack_outcomes([out] * len(x))
            y_lat = lattice_received(h, y, const)
            outs += [lr_detect_batch(red, y_lat, const, sic=False),
                     lr_detect_batch(red, y_lat, const, sic=True)]
        failures += sum(not np.allclose(o, x, atol=1e-12) for o in outs)
    record_property("noiseless_failures", failures)

    mmse_err = 0.0
    for _ in range(1000):
        h = complex_normal(rng, (4, 4))
        y = complex_normal(rng, (4,))
        s2 = float(rng.uniform(0.01, 2.0))
        direct = np.linalg.inv(h.conj().T @ h + s2 * np.eye(4)) @ h.conj().T @ y
        ext = np.linalg.pinv(extended_channel(h, s2)) @ np.concatenate([y, np.zeros(4)])
        mmse_err = max(mmse_err, np.max(np.abs(mmse_equalize_batch(h[None], y[None], s2)[0] - direct)),
                       np.max(np.abs(ext - direct)))
    record_property("mmse_identity_max_err", f"{mmse_err:.2e}")

    bs_err = 0.0
    for _ in range(1000):
        r = qr_givens(complex_normal(rng, (4, 4))).r
        v = complex_normal(rng, (4,))
        bs_err = max(bs_err, np.max(np.abs(back_substitute(r, v) - np.linalg.inv(r) @ v)))
    record_property("back_substitution_max_err", f"{bs_err:.2e}")

    assert failures == 0
    assert mmse_err <= 1e-9
    assert bs_err <= 1e-9
