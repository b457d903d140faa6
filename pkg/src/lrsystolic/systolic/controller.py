"""External controller: starts passes, gates swap requests and decides termination.

The controller sees every diagonal cell's check result through its direct
wires and opens the switches between diagonal cells and vectoring cells.
Its decisions take effect on the hop leaving the cycle in which they are
made; the final termination test itself is free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import IterationLimit, ProtocolViolation, ShapeMismatch
from ..linalg import QRFactors
from ..reduction import Algorithm, Condition, ReductionOutcome, ReductionParams
from .array import ArrayState, PassTiming, kick, request_swap, step_cycle
from .timing import column_op_start, column_ops_end, full_size_reduction_end

MAX_IDLE = 10_000


def _parity_positions(m: int, order: str) -> list:
    return list(range(1, m, 2) if order == "even" else range(2, m, 2))


def _flip(order: str) -> str:
    return "odd" if order == "even" else "even"


@dataclass
class IterationRecord:
    start: int
    end: int = 0
    swaps: list = field(default_factory=list)
    decision_cycle: int | None = None


class Controller:
    """Per-pass switch logic for FSR-LLL and ASLR (or a bare size-reduction pass)."""

    def __init__(self, m: int, algorithm: Algorithm | None, strict: bool = False):
        self.m = m
        self.algorithm = algorithm
        self.strict = strict
        self.k = 1              # FSR lower bound on the swap position
        self.order = "even"     # ASLR parity to try first
        self.finished = False
        self.records: list[IterationRecord] = []
        self._reset(0)

    def _reset(self, start: int):
        self.start = start
        self.checks: dict[int, bool] = {}
        self.open: set[int] = set()
        self.latched: set[int] = set()
        self.decided = False
        self.swapped: list[int] = []
        self.swap_parity: str | None = None
        self.active_parity = self.order

    # -- pass lifecycle
    def begin(self, state: ArrayState, out: list):
        self._reset(state.cycle)
        self.records.append(IterationRecord(start=state.cycle))
        if self.algorithm is Algorithm.ASLR and not self.strict:
            self.open = set(_parity_positions(self.m, self.order))
        state.timing = PassTiming(start=state.cycle)
        for row in state.cells:
            for c in row:
                c.ops_done = 0
                c.mu_cycle = None
                c.rotated = False
                c.check = None
        kick(state, out)

    def _needed(self) -> list:
        if self.algorithm is Algorithm.FSR_LLL:
            return list(range(self.k, self.m))
        if self.algorithm is Algorithm.ASLR:
            return _parity_positions(self.m, self.active_parity)
        return []

    def _release(self, state: ArrayState, positions, out: list):
        for k in sorted(positions):
            self.open.add(k)
            if k in self.latched:
                self.latched.discard(k)
                self._fire(state, k, out)

    def _fire(self, state: ArrayState, k: int, out: list):
        request_swap(state, k, out)
        self.swapped.append(k)
        if state.log is not None:
            state.log.add(state.cycle, "controller", "switch", {"k": k + 1})

    # -- callbacks from the array
    def on_check(self, state: ArrayState, k: int, holds: bool, out: list):
        self.checks[k] = holds
        if holds or self.algorithm is None:
            return
        if k in self.open and not self.decided_against(k):
            self._fire(state, k, out)
        else:
            self.latched.add(k)

    def decided_against(self, k: int) -> bool:
        # ASLR: once the first parity had swaps, the other parity stays closed
        return self.algorithm is Algorithm.ASLR and self.swap_parity not in (None, self._parity_of(k))

    def _parity_of(self, k: int) -> str:
        return "even" if k % 2 == 1 else "odd"

    def on_cycle_end(self, state: ArrayState, out: list):
        if self.algorithm is None or self.decided:
            return
        rel = state.cycle - self.start
        if self.strict and rel < full_size_reduction_end(self.m):
            return
        needed = self._needed()
        if any(k not in self.checks for k in needed):
            return
        rec = self.records[-1]
        if self.algorithm is Algorithm.FSR_LLL:
            hit = next((k for k in needed if not self.checks[k]), None)
            self.decided = True
            rec.decision_cycle = rel
            if hit is not None:
                self._release(state, [hit], out)
            return
        # ASLR
        hits = [k for k in needed if not self.checks[k]]
        if hits:
            self.swap_parity = self.active_parity
            self.decided = True
            rec.decision_cycle = rel
            if self.strict:
                self._release(state, hits, out)
            return
        if self.active_parity == self.order:
            self.active_parity = _flip(self.order)
            others = _parity_positions(self.m, self.active_parity)
            self.swap_parity = self.active_parity
            self._release(state, others, out)
            if not any(k not in self.checks for k in others):
                self.decided = True
                rec.decision_cycle = rel
        else:
            self.decided = True
            rec.decision_cycle = rel

    def end(self, state: ArrayState):
        """Close the pass once the array is quiet; returns True when reduction is done."""
        rec = self.records[-1]
        rec.end = state.last_active
        rec.swaps = sorted(self.swapped)
        if self.algorithm is None:
            self.finished = True
            return True
        if not self.decided:
            raise ProtocolViolation("pass ended before the controller could decide")
        if not self.swapped:
            self.finished = True
            return True
        if self.algorithm is Algorithm.FSR_LLL:
            self.k = max(self.swapped[0] - 1, 1)
        else:
            self.order = _flip(self.swap_parity)
        return False


def _drain(state: ArrayState):
    idle = 0
    while not state.quiescent():
        step_cycle(state)
        idle += 1
        if idle > MAX_IDLE:
            raise ProtocolViolation("array did not settle")


def _run_pass(state: ArrayState, ctrl: Controller):
    out: list = []
    ctrl.begin(state, out)
    state.in_flight = out
    state.last_active = state.cycle
    _drain(state)
    stats = state.stats
    stats.size_reduction_rounds += 1
    done = ctrl.end(state)
    if ctrl.swapped:
        stats.column_swaps += len(ctrl.swapped)
        stats.parallel_swap_rounds += 1
        stats.rounds.append(sorted(ctrl.swapped))
    return done


@dataclass
class SizeReductionTiming:
    """Relative cycle numbers of one full-size-reduction pass (1-based indices in keys)."""

    m: int
    op_start: dict
    column_end: dict
    end: int

    def expected_op_start(self) -> dict:
        return {(i, j): column_op_start(self.m, i, j)
                for j in range(2, self.m + 1) for i in range(1, j)}

    def expected_column_end(self) -> dict:
        return {j: column_ops_end(self.m, j) for j in range(2, self.m + 1)}

    def matches_closed_forms(self) -> bool:
        return (self.op_start == self.expected_op_start()
                and self.column_end == self.expected_column_end()
                and self.end == full_size_reduction_end(self.m))


def _timing_from(state: ArrayState) -> SizeReductionTiming:
    tm = state.timing
    return SizeReductionTiming(
        m=state.m,
        op_start={(i + 1, j + 1): c for (i, j), c in tm.op_start.items()},
        column_end={j + 1: c for j, c in tm.column_end.items()},
        end=state.last_active - tm.start,
    )


def run_full_size_reduction(state: ArrayState):
    """One full-size-reduction pass with no swaps; returns ``(state, timing)``."""
    ctrl = Controller(state.m, None)
    state.controller = ctrl
    _run_pass(state, ctrl)
    return state, _timing_from(state)


@dataclass
class ArrayRun:
    """Unpacks as ``(outcome, log)``; also carries per-pass records and the cycle count."""

    state: ArrayState
    outcome: ReductionOutcome
    records: list
    total_cycles: int

    @property
    def log(self):
        return self.state.log

    def __iter__(self):
        return iter((self.outcome, self.log))


def run_reduction(state: ArrayState, params: ReductionParams, strict: bool = False) -> ArrayRun:
    """Drive FSR-LLL or ASLR on the array until no swap condition is violated.

    ``strict`` holds every rotation until the pass's size reduction has
    completed; by default rotations overlap with the tail of size reduction.
    """
    if params.algorithm not in (Algorithm.FSR_LLL, Algorithm.ASLR):
        raise ValueError(f"the array runs fsr or aslr, not {params.algorithm.value}")
    if params.condition is not Condition.SIEGEL:
        raise ValueError("the array evaluates the Siegel condition only")
    m = state.m
    state.siegel_ratio = params.siegel_ratio
    ctrl = Controller(m, params.algorithm, strict=strict)
    state.controller = ctrl
    cap = params.iteration_cap(m)
    first = True
    while True:
        if not first:
            state.cycle += 1
        first = False
        state.stats.iterations += 1
        if state.stats.iterations > cap:
            q_h, r, t = state.matrices()
            outcome = ReductionOutcome(q_h, r, t, state.stats, params, converged=False)
            raise IterationLimit(f"array exceeded {cap} iterations", outcome)
        if m < 2:
            break
        if _run_pass(state, ctrl):
            break
    state.reduced = True
    q_h, r, t = state.matrices()
    outcome = ReductionOutcome(q_h, r, t, state.stats, params)
    return ArrayRun(state, outcome, ctrl.records, state.last_active)


def reduce_on_array(qr: QRFactors, params: ReductionParams, t0=None, strict: bool = False,
                    log: bool = False) -> ArrayRun:
    from .array import init_array
    if qr.r.shape[0] != qr.q_h.shape[0]:
        raise ShapeMismatch("q_h and r disagree on m")
    return run_reduction(init_array(qr, t0, log=log), params, strict=strict)
