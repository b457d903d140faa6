"""Sequential complex lattice reduction: conventional LLL, FSR-LLL and ASLR.

All three algorithms take QR factors ``q_h @ h == r`` and return reduced
factors together with the unimodular ``t`` such that
``q_h^H @ r == h @ t``. Column indices are 0-based; a swap position ``k``
refers to the column pair ``(k - 1, k)`` with ``1 <= k <= m - 1``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateRotation, IterationLimit, ZeroDiagonal
from .linalg import QRFactors, permutation_matrix, qr_givens, round_gaussian, sorted_qr

ZERO_TOL = 1e-12

# real-operation weights; a complex multiply is 4 real mults + 2 real adds
FLOP_WEIGHTS = {
    "cmul": 6,   # complex * complex
    "cadd": 2,   # complex +/- complex
    "rcmul": 2,  # real * complex, or complex / real
    "cabs2": 3,  # |z|^2
    "rmul": 1,
    "radd": 1,
    "rdiv": 1,
    "sqrt": 1,
}


def count_flops(trace) -> int:
    """Total real operations for a tally like ``{"cmul": 3, "cadd": 3}``."""
    return int(sum(FLOP_WEIGHTS[kind] * n for kind, n in trace.items()))


class Algorithm(str, Enum):
    CLLL = "clll"
    FSR_LLL = "fsr"
    ASLR = "aslr"


class Condition(str, Enum):
    LOVASZ = "lovasz"
    SIEGEL = "siegel"


@dataclass(frozen=True)
class ReductionParams:
    algorithm: Algorithm = Algorithm.FSR_LLL
    delta: float = 0.99
    condition: Condition | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if not 0.5 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (1/2, 1), got {self.delta}")
        cond = self.condition
        if cond is None:
            cond = Condition.LOVASZ if self.algorithm is Algorithm.CLLL else Condition.SIEGEL
        object.__setattr__(self, "condition", Condition(cond))

    @property
    def siegel_ratio(self) -> float:
        return math.sqrt(self.delta - 0.5)

    def iteration_cap(self, m: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 1000 * m * m


@dataclass
class ReductionStats:
    column_swaps: int = 0
    parallel_swap_rounds: int = 0
    size_reduction_rounds: int = 0
    iterations: int = 0
    ops: Counter = field(default_factory=Counter)
    mu_magnitude_histogram: Counter = field(default_factory=Counter)
    # swap positions k executed in each round, in order
    rounds: list = field(default_factory=list)

    @property
    def flops(self) -> int:
        return count_flops(self.ops)

    def as_dict(self) -> dict:
        hist = {str(key): self.mu_magnitude_histogram.get(key, 0) for key in (0, 1, 2, ">2")}
        return {
            "column_swaps": self.column_swaps,
            "parallel_swap_rounds": self.parallel_swap_rounds,
            "size_reduction_rounds": self.size_reduction_rounds,
            "iterations": self.iterations,
            "flops": self.flops,
            "mu_magnitude_histogram": hist,
        }


@dataclass
class ReductionState:
    """Mutable working copy; the step functions below update it in place."""

    q_h: np.ndarray
    r: np.ndarray
    t: np.ndarray
    order: str = "even"
    stats: ReductionStats = field(default_factory=ReductionStats)

    @classmethod
    def from_qr(cls, qr: QRFactors, t0=None) -> "ReductionState":
        m = qr.m
        t = np.eye(m, dtype=np.complex128) if t0 is None else np.array(t0, dtype=np.complex128)
        return cls(qr.q_h.astype(np.complex128, copy=True), qr.r.astype(np.complex128, copy=True), t)

    @property
    def m(self) -> int:
        return self.r.shape[0]


@dataclass
class ReductionOutcome:
    q_h: np.ndarray
    r: np.ndarray
    t: np.ndarray
    stats: ReductionStats
    params: ReductionParams
    converged: bool = True


def _mu_bin(mu: complex):
    mag = max(abs(mu.real), abs(mu.imag))
    return int(mag) if mag <= 2 else ">2"


def mu_coeff(r: np.ndarray, i: int, j: int) -> complex:
    """Nearest Gaussian integer to ``r[i, j] / r[i, i]`` (ties away from zero)."""
    d = complex(r[i, i])
    if abs(d) < ZERO_TOL:
        raise ZeroDiagonal(f"|r[{i},{i}]| = {abs(d):.3e}")
    return round_gaussian(complex(r[i, j]) / d)


def size_reduce_entry(state: ReductionState, i: int, j: int) -> ReductionState:
    """Subtract ``mu * column i`` from column ``j`` of R and T (``i < j``).

    A zero ``mu`` leaves the state untouched and costs nothing.
    """
    mu = mu_coeff(state.r, i, j)
    state.stats.mu_magnitude_histogram[_mu_bin(mu)] += 1
    if mu == 0:
        return state
    state.r[: i + 1, j] -= mu * state.r[: i + 1, i]
    state.t[:, j] -= mu * state.t[:, i]
    touched = i + 1 + state.m
    state.stats.ops["cmul"] += touched
    state.stats.ops["cadd"] += touched
    return state


def full_size_reduction(state: ReductionState) -> ReductionState:
    """Size-reduce every column, last column first, each against i = j-1 .. 0."""
    m = state.m
    for j in range(m - 1, 0, -1):
        for i in range(j - 1, -1, -1):
            size_reduce_entry(state, i, j)
    state.stats.size_reduction_rounds += 1
    return state


def swap_condition_holds(r: np.ndarray, k: int, params: ReductionParams, ops=None) -> bool:
    """Lovász or Siegel test on the column pair ``(k - 1, k)``.

    Siegel is evaluated without division as
    ``|r_kk| >= sqrt(delta - 1/2) * |r_{k-1,k-1}|``. Lovász is evaluated in
    the equivalent division-free form
    ``delta |r_{k-1,k-1}|^2 <= |r_kk|^2 + |r_{k-1,k}|^2``.
    """
    prev = abs(r[k - 1, k - 1])
    cur = abs(r[k, k])
    if params.condition is Condition.SIEGEL:
        if ops is not None:
            ops["rmul"] += 1
        return cur >= params.siegel_ratio * prev
    off = r[k - 1, k]
    if ops is not None:
        ops["rmul"] += 3
        ops["cabs2"] += 1
        ops["radd"] += 1
    return params.delta * prev * prev <= cur * cur + (off.real * off.real + off.imag * off.imag)


def givens_matrix(a: complex, b: complex) -> np.ndarray:
    """Unitary ``[[a*/h, b*/h], [-b/h, a/h]]`` with ``h = sqrt(|a|^2 + |b|^2)``."""
    a, b = complex(a), complex(b)
    h = math.sqrt(a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag)
    if h < ZERO_TOL:
        raise DegenerateRotation(f"rotation norm {h:.3e}")
    return np.array([[a.conjugate() / h, b.conjugate() / h], [-b / h, a / h]])


def swap_rotation(a: complex, b: complex):
    """Rotation used before a column swap, as a 4-tuple ``(g11, g12, g21, g22)``.

    It is ``givens_matrix(a, b)`` with the second row negated. For the real
    nonnegative ``b = r_kk`` and ``r_{k-1,k-1}`` the sign flip keeps the
    swapped diagonal nonnegative, so every diagonal entry of R stays real
    and nonnegative through the whole reduction.
    """
    a, b = complex(a), complex(b)
    h = math.sqrt(a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag)
    if h < ZERO_TOL:
        raise DegenerateRotation(f"rotation norm {h:.3e}")
    return a.conjugate() / h, b.conjugate() / h, b / h, -a / h


def apply_rotation(g, x, y):
    """Apply a ``swap_rotation`` tuple to the row pair ``(x, y)``; scalars or arrays."""
    g11, g12, g21, g22 = g
    return g11 * x + g12 * y, g21 * x + g22 * y


def givens_swap_step(state: ReductionState, k: int) -> ReductionState:
    """Rotate rows ``k-1, k`` so R stays triangular, then swap columns ``k-1, k``."""
    m, n = state.m, state.q_h.shape[1]
    g = swap_rotation(state.r[k - 1, k], state.r[k, k])
    r_top, r_bot = apply_rotation(g, state.r[k - 1, k - 1:], state.r[k, k - 1:])
    state.r[k - 1, k - 1:], state.r[k, k - 1:] = r_top, r_bot
    q_top, q_bot = apply_rotation(g, state.q_h[k - 1], state.q_h[k])
    state.q_h[k - 1], state.q_h[k] = q_top, q_bot
    state.r[k, k] = 0.0
    state.r[:, [k - 1, k]] = state.r[:, [k, k - 1]]
    state.t[:, [k - 1, k]] = state.t[:, [k, k - 1]]
    # one swapped diagonal is real in exact arithmetic; drop rounding residue
    state.r[k - 1, k - 1] = state.r[k - 1, k - 1].real
    state.r[k, k] = state.r[k, k].real
    ops = state.stats.ops
    ops["cabs2"] += 2
    ops["radd"] += 1
    ops["sqrt"] += 1
    ops["rcmul"] += 2
    columns = (m - k + 1) + n
    ops["cmul"] += 2 * columns
    ops["rcmul"] += 2 * columns
    ops["cadd"] += 2 * columns
    state.stats.column_swaps += 1
    return state


def _check_cap(stats: ReductionStats, cap: int, state: ReductionState, params: ReductionParams):
    if stats.iterations > cap:
        outcome = _outcome(state, params, converged=False)
        raise IterationLimit(f"{params.algorithm.value} exceeded {cap} iterations", outcome)


def _outcome(state: ReductionState, params: ReductionParams, converged: bool = True) -> ReductionOutcome:
    return ReductionOutcome(state.q_h, state.r, state.t, state.stats, params, converged)


def reduce_fsr_lll(qr: QRFactors, params: ReductionParams | None = None, t0=None) -> ReductionOutcome:
    """LLL with full size reduction.

    Every iteration size-reduces the whole matrix, then looks for the
    smallest violating position ``k' >= k``; a hit is rotated and swapped and
    the search restarts at ``max(k' - 1, 1)``, otherwise the loop ends.
    """
    params = params or ReductionParams(Algorithm.FSR_LLL)
    state = ReductionState.from_qr(qr, t0)
    stats, m = state.stats, state.m
    cap = params.iteration_cap(m)
    k = 1
    while k <= m - 1:
        stats.iterations += 1
        _check_cap(stats, cap, state, params)
        full_size_reduction(state)
        hit = None
        for kk in range(k, m):
            if not swap_condition_holds(state.r, kk, params, stats.ops):
                hit = kk
                break
        if hit is None:
            break
        givens_swap_step(state, hit)
        stats.parallel_swap_rounds += 1
        stats.rounds.append([hit])
        k = max(hit - 1, 1)
    return _outcome(state, params)


def _parity_positions(m: int, order: str) -> range:
    # "even" means even 1-based k, i.e. odd 0-based positions 1, 3, 5, ...
    return range(1, m, 2) if order == "even" else range(2, m, 2)


def _flip(order: str) -> str:
    return "odd" if order == "even" else "even"


def reduce_aslr(qr: QRFactors, params: ReductionParams | None = None, t0=None) -> ReductionOutcome:
    """All-swap lattice reduction.

    After each full size reduction every violating position of the current
    parity is rotated and swapped at once (the row pairs are disjoint). If
    the current parity is clean the other parity is checked on the same
    size-reduced matrix. The loop ends when neither parity has a violation.
    """
    params = params or ReductionParams(Algorithm.ASLR)
    state = ReductionState.from_qr(qr, t0)
    stats, m = state.stats, state.m
    cap = params.iteration_cap(m)
    if m < 2:
        return _outcome(state, params)
    while True:
        stats.iterations += 1
        _check_cap(stats, cap, state, params)
        full_size_reduction(state)
        parity = state.order
        hits = [k for k in _parity_positions(m, parity)
                if not swap_condition_holds(state.r, k, params, stats.ops)]
        if not hits:
            parity = _flip(parity)
            hits = [k for k in _parity_positions(m, parity)
                    if not swap_condition_holds(state.r, k, params, stats.ops)]
            if not hits:
                break
        for k in hits:
            givens_swap_step(state, k)
        stats.parallel_swap_rounds += 1
        stats.rounds.append(hits)
        state.order = _flip(parity)
    return _outcome(state, params)


def reduce_clll(qr: QRFactors, params: ReductionParams | None = None, t0=None) -> ReductionOutcome:
    """Conventional complex LLL: size-reduce column k, test, swap or advance."""
    params = params or ReductionParams(Algorithm.CLLL)
    state = ReductionState.from_qr(qr, t0)
    stats, m = state.stats, state.m
    cap = params.iteration_cap(m)
    k = 1
    while k <= m - 1:
        stats.iterations += 1
        _check_cap(stats, cap, state, params)
        for i in range(k - 1, -1, -1):
            size_reduce_entry(state, i, k)
        stats.size_reduction_rounds += 1
        if swap_condition_holds(state.r, k, params, stats.ops):
            k += 1
        else:
            givens_swap_step(state, k)
            stats.parallel_swap_rounds += 1
            stats.rounds.append([k])
            k = max(k - 1, 1)
    return _outcome(state, params)


_REDUCERS = {
    Algorithm.CLLL: reduce_clll,
    Algorithm.FSR_LLL: reduce_fsr_lll,
    Algorithm.ASLR: reduce_aslr,
}


def reduce(qr: QRFactors, params: ReductionParams, t0=None) -> ReductionOutcome:
    return _REDUCERS[params.algorithm](qr, params, t0)


def reduce_channel(h, params: ReductionParams, qrd: str = "qrd") -> ReductionOutcome:
    """QR (or sorted QR) of ``h`` followed by reduction; ``t`` includes the sort permutation."""
    if qrd == "sqrd":
        qr, perm = sorted_qr(h)
        return reduce(qr, params, permutation_matrix(perm))
    if qrd != "qrd":
        raise ValueError(f"unknown QR mode {qrd!r}")
    return reduce(qr_givens(h), params)


def is_size_reduced(r: np.ndarray, tol: float = 1e-12) -> bool:
    m = r.shape[0]
    for j in range(1, m):
        for i in range(j):
            mu = complex(r[i, j]) / complex(r[i, i])
            if abs(mu.real) > 0.5 + tol or abs(mu.imag) > 0.5 + tol:
                return False
    return True


def defect_from_r(r: np.ndarray) -> float:
    """Orthogonality defect of any basis whose R factor is ``r``."""
    col_norms2 = np.sum(np.abs(r) ** 2, axis=0)
    diag2 = np.abs(np.diag(r)) ** 2
    return float(np.exp(np.sum(np.log(col_norms2)) - np.sum(np.log(diag2))))


def orthogonality_defect(h) -> float:
    """``prod ||h_i||^2 / det(h^H h)``; 1 exactly for orthogonal columns."""
    return defect_from_r(qr_givens(h).r)


def defect_bound(m: int, delta: float) -> float:
    """Upper bound on the defect of an LLL (Lovász or Siegel) reduced basis."""
    return 2.0 ** (-m) * (2.0 / (2.0 * delta - 1.0)) ** (m * (m + 1) / 2)
