import numpy as np
import pytest

from lrsystolic.detection import (
    QamConstellation,
    complex_normal,
    extended_channel,
    lr_linear_detect,
    lr_sic_detect,
    sigma2_from_ebn0,
    transmit,
)
from lrsystolic.errors import NotReduced, ProtocolViolation, ShapeMismatch
from lrsystolic.linalg import QRFactors, qr_givens
from lrsystolic.reduction import Algorithm, Condition, ReductionParams, reduce
from lrsystolic.systolic import (
    CellKind,
    Mode,
    SignalKind,
    are_neighbors,
    column_op_start,
    column_ops_end,
    full_size_reduction_end,
    init_array,
    reduce_on_array,
    run_full_size_reduction,
    run_lr_detection_on_array,
    run_reduction,
    sequential_size_reduction_cost,
    step_cycle,
)
from lrsystolic.systolic.array import emit

FSR = ReductionParams(Algorithm.FSR_LLL, 0.99)
ASLR = ReductionParams(Algorithm.ASLR, 0.99)


def identity_qr(m):
    return QRFactors(np.eye(m, dtype=complex), np.eye(m, dtype=complex))


def diag_qr(d):
    return QRFactors(np.eye(len(d), dtype=complex), np.diag(d).astype(complex))


def random_qr(seed, n=4, m=4):
    return qr_givens(complex_normal(np.random.default_rng(seed), (n, m)))


def events(state, cycle):
    return [(c, cell, a, p) for c, cell, a, p in state.log.events if c == cycle]


# ---- layout

def test_init_identity_layout():
    s = init_array(identity_qr(4))
    kinds = [c.kind for row in s.cells for c in row]
    assert len(kinds) == 16
    assert kinds.count(CellKind.DIAGONAL) == 4
    assert len(s.vcells) == 3
    assert all(v.kind is CellKind.VECTORING and not v.request for v in s.vcells.values())
    assert all(c.mode is Mode.IDLE for row in s.cells for c in row)
    assert s.quiescent()


def test_extended_q_folds_into_two_registers():
    h = complex_normal(np.random.default_rng(0), (4, 4))
    qr = qr_givens(extended_channel(h, 0.1))
    s = init_array(qr)
    assert s.folds == 2
    assert all(len(c.q) == 2 for row in s.cells for c in row)
    np.testing.assert_array_equal(s.matrices()[0], qr.q_h)


def test_init_shape_errors():
    with pytest.raises(ShapeMismatch):
        init_array(QRFactors(np.eye(3), np.eye(4)))
    with pytest.raises(ShapeMismatch):
        init_array(identity_qr(4), t0=np.eye(3))


def test_neighbourhood():
    assert are_neighbors((0, 0), (0, 1))
    assert are_neighbors((1, 1), (0, 0))
    assert not are_neighbors((0, 0), (0, 2))
    assert are_neighbors(("V", 2), (1, 2)) and are_neighbors(("V", 2), (2, 2))
    assert not are_neighbors(("V", 2), (3, 2))


def test_non_neighbour_emit_rejected():
    s = init_array(identity_qr(4))
    with pytest.raises(ProtocolViolation):
        emit(s, [], SignalKind.MU, (0j,), (0, 0), (3, 3))


def test_idle_step_changes_nothing_but_the_clock():
    s = init_array(random_qr(1))
    before = [m.copy() for m in s.matrices()]
    step_cycle(s)
    assert s.cycle == 1
    for a, b in zip(before, s.matrices()):
        np.testing.assert_array_equal(a, b)
    assert s.quiescent()


# ---- full size reduction walkthrough for m = 4

@pytest.fixture(scope="module")
def m4_trace():
    s = init_array(random_qr(2), log=True)
    s, timing = run_full_size_reduction(s)
    return s, timing


def test_hash_reaches_d33_at_one(m4_trace):
    s, _ = m4_trace
    assert (0, "D4,4", "send", {"kind": "#", "to": "D3,3"}) in events(s, 0)
    t1 = events(s, 1)
    assert (1, "D3,3", "data-mode", None) in t1
    assert (1, "D3,3", "send", {"kind": "data", "to": "O3,4"}) in t1
    assert {p["to"] for _, c, a, p in t1 if c == "D3,3" and p and p.get("kind") == "#"} == \
        {"O2,3", "D2,2", "O4,3"}


def test_mu_from_o34_at_two(m4_trace):
    s, _ = m4_trace
    t2 = events(s, 2)
    assert any(c == "O3,4" and a == "mu" for _, c, a, _ in t2)
    assert {p["to"] for _, c, a, p in t2 if c == "O3,4" and a == "send"} == {"O2,4", "D4,4"}


def test_updates_at_three(m4_trace):
    s, _ = m4_trace
    t3 = [(c, a) for _, c, a, _ in events(s, 3)]
    assert ("O2,4", "update") in t3 and ("D4,4", "update") in t3
    assert ("O2,3", "mu") in t3


def test_column_ops_start_times(m4_trace):
    _, timing = m4_trace
    assert timing.op_start[(2, 4)] == 4
    assert timing.op_start[(1, 4)] == 6
    assert timing.column_end[4] == 9
    assert timing.end == 9


@pytest.mark.parametrize("m", range(3, 13))
def test_closed_form_timing(m):
    _, timing = run_full_size_reduction(init_array(random_qr(m, m, m)))
    assert timing.op_start == {(i, j): m + j - 2 * i for j in range(2, m + 1) for i in range(1, j)}
    assert timing.column_end == {j: 2 * m + j - 3 for j in range(2, m + 1)}
    assert timing.end == 3 * m - 3
    assert timing.matches_closed_forms()


def test_closed_form_helpers():
    assert column_op_start(4, 1, 4) == 6
    assert column_ops_end(4, 4) == 9
    assert full_size_reduction_end(4) == 9


@pytest.mark.parametrize("m, cost", [(3, 6), (4, 17), (8, 111)])
def test_sequential_cost(m, cost):
    assert sequential_size_reduction_cost(m) == cost
    assert cost == 2.5 * m * m - 6.5 * m + 3
    assert cost > 3 * m - 3 or m == 3


# ---- reduction runs

@pytest.mark.parametrize("params", [FSR, ASLR], ids=["fsr", "aslr"])
def test_identity_run(params):
    run = run_reduction(init_array(identity_qr(4)), params)
    assert run.total_cycles == 9
    assert run.outcome.stats.column_swaps == 0
    assert run.outcome.stats.iterations == 1
    np.testing.assert_array_equal(run.outcome.t, np.eye(4))


def test_run_unpacks_as_outcome_and_log():
    outcome, log = run_reduction(init_array(random_qr(3), log=True), ASLR)
    assert outcome.converged and len(log.events) > 0


def test_parallel_pair_swaps_take_no_longer_than_one():
    two = run_reduction(init_array(diag_qr([1, 0.1, 1, 0.1])), ASLR)
    one = run_reduction(init_array(diag_qr([1, 1, 1, 0.1])), ASLR)
    assert two.records[0].swaps == [1, 3]
    assert one.records[0].swaps == [3]
    assert two.records[0].end - two.records[0].start == one.records[0].end - one.records[0].start


@pytest.mark.parametrize("params", [FSR, ASLR], ids=["fsr", "aslr"])
@pytest.mark.parametrize("strict", [False, True], ids=["overlap", "strict"])
@pytest.mark.parametrize("shape", [(4, 4), (8, 4), (6, 6)])
def test_matches_sequential(params, strict, shape):
    for seed in range(10):
        qr = random_qr(seed, *shape)
        ref = reduce(qr, params)
        run = reduce_on_array(qr, params, strict=strict)
        for a, b in zip((run.outcome.r, run.outcome.q_h, run.outcome.t), (ref.r, ref.q_h, ref.t)):
            assert np.max(np.abs(a - b)) <= 1e-9
        assert run.outcome.stats.column_swaps == ref.stats.column_swaps
        assert run.outcome.stats.parallel_swap_rounds == ref.stats.parallel_swap_rounds


def test_strict_mode_is_never_faster():
    for seed in range(5):
        qr = random_qr(seed)
        assert (reduce_on_array(qr, FSR, strict=True).total_cycles
                >= reduce_on_array(qr, FSR).total_cycles)


def test_every_hop_is_local():
    run = reduce_on_array(random_qr(4, 6, 6), ASLR, log=True)
    hops = run.state.hops
    assert hops
    assert all(isinstance(src, str) or isinstance(dst, str) or are_neighbors(src, dst)
               for _, src, dst, _ in hops)


def test_log_replay_is_deterministic():
    a = reduce_on_array(random_qr(5), FSR, log=True)
    b = reduce_on_array(random_qr(5), FSR, log=True)
    assert a.log == b.log
    assert a.log.to_jsonl() == b.log.to_jsonl()


def test_array_rejects_unsupported_params():
    with pytest.raises(ValueError):
        run_reduction(init_array(identity_qr(4)), ReductionParams(Algorithm.CLLL))
    with pytest.raises(ValueError):
        run_reduction(init_array(identity_qr(4)),
                      ReductionParams(Algorithm.FSR_LLL, 0.99, Condition.LOVASZ))


# ---- detection on the array

def test_detection_requires_reduction():
    with pytest.raises(NotReduced):
        run_lr_detection_on_array(init_array(identity_qr(4)), np.zeros(4), QamConstellation(4))


def test_identity_channel_noiseless():
    const = QamConstellation(16)
    x = const.points[[0, 5, 10, 15]]
    run = reduce_on_array(identity_qr(4), FSR)
    np.testing.assert_allclose(run_lr_detection_on_array(run.state, x, const), x, atol=1e-12)


@pytest.mark.parametrize("sic", [False, True], ids=["linear", "sic"])
@pytest.mark.parametrize("mmse", [False, True], ids=["zf", "mmse"])
def test_detection_matches_sequential(sic, mmse):
    const = QamConstellation(4)
    rng = np.random.default_rng(11)
    sigma2 = sigma2_from_ebn0(8, 4, 4)
    seq = lr_sic_detect if sic else lr_linear_detect
    for _ in range(20):
        h = complex_normal(rng, (4, 4))
        x = const.points[rng.integers(0, 4, 4)]
        y = transmit(rng, h, x, sigma2)
        s2 = sigma2 if mmse else None
        h_eff = extended_channel(h, sigma2) if mmse else h
        run = reduce_on_array(qr_givens(h_eff), ASLR)
        got = run_lr_detection_on_array(run.state, y, const, h=h, sigma2=s2, sic=sic)
        ref = seq(h, y, ASLR, const, sigma2=s2, outcome=run.outcome)
        np.testing.assert_array_equal(got, ref)


def test_detection_shape_mismatch():
    run = reduce_on_array(identity_qr(4), FSR)
    with pytest.raises(ShapeMismatch):
        run_lr_detection_on_array(run.state, np.zeros(4), QamConstellation(4), sigma2=0.1)
