"""Processing-element grid, signals and the per-cycle cell programs.

The grid holds one data cell per (row, column) of R. Diagonal cell
``(i, i)`` and off-diagonal cell ``(i, j)`` store ``r_ij``, ``t_ij`` and the
folded ``q`` entries ``q_h[i, j + l*m]``. Between rows ``k-1`` and ``k`` sit
one vectoring cell (at column ``k``) and a rotation cell at every other
column. Indices are 0-based; log labels are 1-based (``D3,3``, ``O2,4``,
``V4``, ``G4,2``).

Every signal travels exactly one hop and is consumed in the cycle after it
was emitted. Within a cycle the cells read their registers, act, and queue
outgoing signals; ``_write_once`` guards against two actions writing the
same register in one cycle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from ..errors import ProtocolViolation, ShapeMismatch, ZeroDiagonal
from ..linalg import QRFactors, round_gaussian
from ..reduction import ReductionStats, _mu_bin, apply_rotation, swap_rotation

ZERO_TOL = 1e-12


class CellKind(str, Enum):
    DIAGONAL = "diagonal"
    OFF_DIAGONAL_UPPER = "off-diagonal-upper"
    OFF_DIAGONAL_LOWER = "off-diagonal-lower"
    VECTORING = "vectoring"
    ROTATION = "rotation"


class Mode(str, Enum):
    IDLE = "idle"
    DATA = "data"
    SIZE_REDUCTION = "size-reduction"


class SignalKind(str, Enum):
    HASH = "#"
    MU = "mu"
    DATA = "data"
    SWAP = "swap"
    ROTATION = "theta"
    # detection flows
    Y = "y"
    PSUM = "psum"
    XHAT = "xhat"


class Signal(NamedTuple):
    kind: SignalKind
    payload: tuple
    src: object
    dst: object
    emit_cycle: int


class CellState:
    __slots__ = ("kind", "i", "j", "r", "t", "q", "mode", "ops_done", "mu_cycle",
                 "rotated", "held", "check", "last_op")

    def __init__(self, kind, i, j, r, t, q):
        self.kind = kind
        self.i, self.j = i, j
        self.r, self.t, self.q = r, t, q
        self.mode = Mode.IDLE
        self.ops_done = 0       # column operations applied in the current pass
        self.mu_cycle = None    # cycle this cell computed its mu (tagged cells only)
        self.rotated = False
        self.held = []          # swap waves waiting for this cell to finish its pass
        self.last_op = -1
        self.check = None


class PairCell:
    """Vectoring or rotation cell between rows ``k-1`` and ``k`` at column ``j``."""

    __slots__ = ("kind", "k", "j", "request", "fired_cycle", "wave_pending")

    def __init__(self, kind, k, j):
        self.kind = kind
        self.k, self.j = k, j
        self.request = False
        self.fired_cycle = None
        self.wave_pending = False


def label(key) -> str:
    if key is None:
        return "host"
    if isinstance(key, str):
        return key
    if key[0] == "V":
        return f"V{key[1] + 1}"
    if key[0] == "G":
        return f"G{key[1] + 1},{key[2] + 1}"
    i, j = key
    return f"{'D' if i == j else 'O'}{i + 1},{j + 1}"


def position(key):
    """Grid coordinates used for the nearest-neighbour check; pair cells sit between rows."""
    if key is None or isinstance(key, str):
        return None
    if key[0] == "V":
        return (key[1] - 0.5, float(key[1]))
    if key[0] == "G":
        return (key[1] - 0.5, float(key[2]))
    return (float(key[0]), float(key[1]))


def are_neighbors(a, b) -> bool:
    pa, pb = position(a), position(b)
    if pa is None or pb is None:
        return True
    d = max(abs(pa[0] - pb[0]), abs(pa[1] - pb[1]))
    return 0 < d <= 1


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, (np.complexfloating,)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, Enum):
        return x.value
    return x


@dataclass
class CycleLog:
    """Per-cycle record of cell firings, signal hops and condition checks."""

    events: list = field(default_factory=list)

    def add(self, cycle, cell, action, payload=None):
        self.events.append((cycle, cell, action, payload))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"cycle": c, "cell": cell, "action": a, "payload": _jsonable(p)},
                            separators=(",", ":"))
                 for c, cell, a, p in self.events]
        return "\n".join(lines) + ("\n" if lines else "")

    def __eq__(self, other):
        return isinstance(other, CycleLog) and self.to_jsonl() == other.to_jsonl()


@dataclass
class PassTiming:
    """Cycle bookkeeping for one full-size-reduction pass, relative to its start."""

    start: int
    op_start: dict = field(default_factory=dict)
    column_end: dict = field(default_factory=dict)
    end: int | None = None


@dataclass
class ArrayState:
    m: int
    width: int
    cells: list
    vcells: dict
    gcells: dict
    siegel_ratio: float = float(np.sqrt(0.49))
    cycle: int = 0
    in_flight: list = field(default_factory=list)
    waiting: set = field(default_factory=set)
    controller: object = None
    log: CycleLog | None = None
    hops: list | None = None
    stats: ReductionStats = field(default_factory=ReductionStats)
    timing: PassTiming | None = None
    reduced: bool = False
    last_active: int = 0
    written: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    last_detection: dict | None = None

    @property
    def folds(self) -> int:
        return -(-self.width // self.m)

    def cell(self, key):
        if key[0] == "V":
            return self.vcells[key[1]]
        if key[0] == "G":
            return self.gcells[(key[1], key[2])]
        return self.cells[key[0]][key[1]]

    def pair_cell(self, k, j):
        return self.vcells[k] if j == k else self.gcells[(k, j)]

    def matrices(self):
        """Current ``(q_h, r, t)`` read back from the registers."""
        m, w = self.m, self.width
        r = np.array([[c.r for c in row] for row in self.cells], dtype=np.complex128)
        t = np.array([[c.t for c in row] for row in self.cells], dtype=np.complex128)
        q_h = np.zeros((m, w), dtype=np.complex128)
        for i in range(m):
            for j in range(m):
                for l, v in enumerate(self.cells[i][j].q):
                    if j + l * m < w:
                        q_h[i, j + l * m] = v
        return q_h, r, t

    def quiescent(self) -> bool:
        return not self.in_flight and not self.waiting


def init_array(qr: QRFactors, t0=None, log: bool = False) -> ArrayState:
    """Load ``q_h``, ``r`` and ``t`` (identity unless given) into the grid at cycle 0."""
    r = np.asarray(qr.r, dtype=np.complex128)
    q_h = np.asarray(qr.q_h, dtype=np.complex128)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ShapeMismatch(f"r must be square, got {r.shape}")
    m = r.shape[0]
    if q_h.ndim != 2 or q_h.shape[0] != m or q_h.shape[1] < m:
        raise ShapeMismatch(f"q_h must be {m} x n with n >= {m}, got {q_h.shape}")
    width = q_h.shape[1]
    t = np.eye(m, dtype=np.complex128) if t0 is None else np.asarray(t0, dtype=np.complex128)
    if t.shape != (m, m):
        raise ShapeMismatch(f"t must be {m} x {m}, got {t.shape}")
    folds = -(-width // m)
    cells = []
    for i in range(m):
        row = []
        for j in range(m):
            kind = (CellKind.DIAGONAL if i == j else
                    CellKind.OFF_DIAGONAL_UPPER if i < j else CellKind.OFF_DIAGONAL_LOWER)
            q = [complex(q_h[i, j + l * m]) if j + l * m < width else 0j for l in range(folds)]
            row.append(CellState(kind, i, j, complex(r[i, j]), complex(t[i, j]), q))
        cells.append(row)
    vcells = {k: PairCell(CellKind.VECTORING, k, k) for k in range(1, m)}
    gcells = {(k, j): PairCell(CellKind.ROTATION, k, j)
              for k in range(1, m) for j in range(m) if j != k}
    return ArrayState(m=m, width=width, cells=cells, vcells=vcells, gcells=gcells,
                      log=CycleLog() if log else None, hops=[] if log else None)


# ---------------------------------------------------------------- signalling

def emit(state: ArrayState, out: list, kind: SignalKind, payload, src, dst):
    if src is not None and not isinstance(src, str) and not are_neighbors(src, dst):
        raise ProtocolViolation(f"{label(src)} -> {label(dst)} is not a nearest-neighbour hop")
    out.append(Signal(kind, payload, src, dst, state.cycle))
    if state.hops is not None:
        state.hops.append((state.cycle, src, dst, kind))
    if state.log is not None:
        state.log.add(state.cycle, label(src), "send", {"kind": kind.value, "to": label(dst)})


def _write_once(state: ArrayState, key, register):
    tag = (key, register)
    if state.written.get(tag) == state.cycle:
        raise ProtocolViolation(f"{label(key)}.{register} written twice in cycle {state.cycle}")
    state.written[tag] = state.cycle


def _note(state: ArrayState, key, action, payload=None):
    state.last_active = state.cycle
    if state.log is not None:
        state.log.add(state.cycle, label(key), action, payload)


# ------------------------------------------------------------ size reduction

def kick(state: ArrayState, out: list):
    """Controller start of a pass: the last diagonal cell passes "#" and its r up the diagonal."""
    m = state.m
    last = state.cells[m - 1][m - 1]
    last.mode = Mode.DATA
    _note(state, (m - 1, m - 1), "data-mode")
    if m >= 2:
        emit(state, out, SignalKind.HASH, ("diag", last.r), (m - 1, m - 1), (m - 2, m - 2))


def _data_mode(state: ArrayState, cell: CellState, sig: Signal, out: list):
    i, j, m = cell.i, cell.j, state.m
    key = (i, j)
    cell.mode = Mode.DATA
    direction = sig.payload[0]
    _note(state, key, "data-mode")
    if direction == "diag":
        below = sig.payload[1]
        holds = abs(below) >= state.siegel_ratio * abs(cell.r)
        state.stats.ops["rmul"] += 1
        cell.check = holds
        _note(state, key, "check", {"k": i + 2, "holds": holds})
        if state.controller is not None:
            state.controller.on_check(state, i + 1, holds, out)
        emit(state, out, SignalKind.DATA, (i, cell.r, cell.t, True), key, (i, i + 1))
        if i > 0:
            emit(state, out, SignalKind.HASH, ("up",), key, (i - 1, j))
            emit(state, out, SignalKind.HASH, ("diag", cell.r), key, (i - 1, i - 1))
        emit(state, out, SignalKind.HASH, ("down",), key, (i + 1, j))
        return
    emit(state, out, SignalKind.DATA, (j, cell.r, cell.t, False), key, (i, j + 1))
    nxt = i - 1 if direction == "up" else i + 1
    if 0 <= nxt < m:
        emit(state, out, SignalKind.HASH, (direction,), key, (nxt, j))


def _column_op(state: ArrayState, cell: CellState, src_col: int, mu: complex, r_in, t_in):
    key = (cell.i, cell.j)
    if cell.rotated and cell.i <= src_col:
        raise ProtocolViolation(f"{label(key)}: r updated after its rotation")
    ops = state.stats.ops
    if mu != 0:
        if cell.i <= src_col:
            _write_once(state, key, "r")
            cell.r -= mu * r_in
            ops["cmul"] += 1
            ops["cadd"] += 1
        _write_once(state, key, "t")
        cell.t -= mu * t_in
        ops["cmul"] += 1
        ops["cadd"] += 1
    cell.ops_done += 1
    cell.last_op = state.cycle
    cell.mode = Mode.SIZE_REDUCTION
    if state.timing is not None and cell.i == state.m - 1:
        state.timing.column_end[cell.j] = state.cycle - state.timing.start


def _size_reduction(state: ArrayState, cell: CellState, data: Signal, mus: list, out: list):
    i, j, m = cell.i, cell.j, state.m
    key = (i, j)
    src_col, r_in, t_in, tagged = data.payload
    if tagged:
        if mus:
            raise ProtocolViolation(f"{label(key)} got mu together with tagged data")
        if abs(r_in) < ZERO_TOL:
            raise ZeroDiagonal(f"|r[{src_col},{src_col}]| = {abs(r_in):.3e}")
        mu = round_gaussian(cell.r / r_in)
        state.stats.mu_magnitude_histogram[_mu_bin(mu)] += 1
        _note(state, key, "mu", {"op": [src_col + 1, j + 1], "mu": mu})
        if state.timing is not None:
            state.timing.op_start[(src_col, j)] = state.cycle - state.timing.start
        _column_op(state, cell, src_col, mu, r_in, t_in)
        if j == i + 1:
            cell.mu_cycle = state.cycle
        if i > 0:
            emit(state, out, SignalKind.MU, (src_col, mu, "up"), key, (i - 1, j))
        if i + 1 < m:
            emit(state, out, SignalKind.MU, (src_col, mu, "down"), key, (i + 1, j))
    else:
        match = [s for s in mus if s.payload[0] == src_col]
        if len(match) != 1 or len(mus) != 1:
            raise ProtocolViolation(f"{label(key)}: data from column {src_col + 1} "
                                    f"without a matching mu in cycle {state.cycle}")
        _, mu, direction = match[0].payload
        _note(state, key, "update", {"op": [src_col + 1, j + 1]})
        _column_op(state, cell, src_col, mu, r_in, t_in)
        nxt = i - 1 if direction == "up" else i + 1
        if 0 <= nxt < m:
            emit(state, out, SignalKind.MU, match[0].payload, key, (nxt, j))
    if j + 1 < m:
        emit(state, out, SignalKind.DATA, data.payload, key, (i, j + 1))


# ------------------------------------------------------ rotation and swap

def _rotate_pair(state: ArrayState, k: int, j: int, g):
    top, bot = state.cells[k - 1][j], state.cells[k][j]
    ops = state.stats.ops
    if j >= k - 1:
        for c in (top, bot):
            _write_once(state, (c.i, c.j), "r")
        top.r, bot.r = apply_rotation(g, top.r, bot.r)
        top.rotated = bot.rotated = True
        ops["cmul"] += 2
        ops["rcmul"] += 2
        ops["cadd"] += 2
    for l in range(state.folds):
        if j + l * state.m < state.width:
            top.q[l], bot.q[l] = apply_rotation(g, top.q[l], bot.q[l])
            ops["cmul"] += 2
            ops["rcmul"] += 2
            ops["cadd"] += 2


def request_swap(state: ArrayState, k: int, out: list):
    """Swap request from diagonal cell ``(k-1, k-1)`` through its switch to vectoring cell k."""
    emit(state, out, SignalKind.SWAP, ("request", k), (k - 1, k - 1), ("V", k))


def _fire_vectoring(state: ArrayState, v: PairCell, out: list) -> bool:
    k = v.k
    sup = state.cells[k - 1][k]
    if sup.mu_cycle is None or sup.mu_cycle >= state.cycle:
        return False
    a, b = sup.r, state.cells[k][k].r
    g = swap_rotation(a, b)
    ops = state.stats.ops
    ops["cabs2"] += 2
    ops["radd"] += 1
    ops["sqrt"] += 1
    ops["rcmul"] += 2
    _note(state, ("V", k), "vectoring", {"a": a, "b": b})
    _rotate_pair(state, k, k, g)
    state.cells[k][k].r = 0j
    v.request = False
    v.fired_cycle = state.cycle
    v.wave_pending = True
    emit(state, out, SignalKind.ROTATION, (g, "left"), ("V", k), ("G", k, k - 1))
    if k + 1 < state.m:
        emit(state, out, SignalKind.ROTATION, (g, "right"), ("V", k), ("G", k, k + 1))
    return True


def _rotation_cell(state: ArrayState, gc: PairCell, sig: Signal, out: list):
    g, direction = sig.payload
    k, j = gc.k, gc.j
    _note(state, ("G", k, j), "rotate")
    _rotate_pair(state, k, j, g)
    nxt = j - 1 if direction == "left" else j + 1
    if 0 <= nxt < state.m:
        dst = ("V", k) if nxt == k else ("G", k, nxt)
        emit(state, out, SignalKind.ROTATION, sig.payload, ("G", k, j), dst)


def _swap_ready(state: ArrayState, p: int, k: int) -> bool:
    # both cells must have finished their column operations in an earlier cycle
    left, right = state.cells[p][k - 1], state.cells[p][k]
    return (right.ops_done >= k and left.ops_done >= k - 1
            and right.last_op < state.cycle and left.last_op < state.cycle)


def _swap_row(state: ArrayState, p: int, k: int, direction: str, out: list):
    left, right = state.cells[p][k - 1], state.cells[p][k]
    for c in (left, right):
        _write_once(state, (c.i, c.j), "r")
        _write_once(state, (c.i, c.j), "t")
    left.r, right.r = right.r, left.r
    left.t, right.t = right.t, left.t
    if p == k - 1:
        left.r = complex(left.r.real)
    elif p == k:
        right.r = complex(right.r.real)
    _note(state, (p, k), "swap", {"columns": [k, k + 1]})
    nxt = p - 1 if direction == "up" else p + 1
    if 0 <= nxt < state.m:
        emit(state, out, SignalKind.SWAP, ("wave", k, direction), (p, k), (nxt, k))


def _try_held(state: ArrayState, cell: CellState, out: list) -> bool:
    still = []
    for sig in cell.held:
        _, k, direction = sig.payload
        if _swap_ready(state, cell.i, k):
            _swap_row(state, cell.i, k, direction, out)
        else:
            still.append(sig)
    cell.held = still
    return not still


# ------------------------------------------------------------------ stepping

def _dispatch(state: ArrayState, key, sigs: list, out: list):
    if key[0] == "V":
        v = state.vcells[key[1]]
        for s in sigs:
            if s.kind is not SignalKind.SWAP:
                raise ProtocolViolation(f"{label(key)} received {s.kind.value}")
        v.request = True
        if not _fire_vectoring(state, v, out):
            state.waiting.add(key)
        return
    if key[0] == "G":
        if len(sigs) != 1 or sigs[0].kind is not SignalKind.ROTATION:
            raise ProtocolViolation(f"{label(key)} received {[s.kind.value for s in sigs]}")
        _rotation_cell(state, state.gcells[(key[1], key[2])], sigs[0], out)
        return
    cell = state.cells[key[0]][key[1]]
    by_kind = {}
    for s in sigs:
        by_kind.setdefault(s.kind, []).append(s)
    unknown = set(by_kind) - {SignalKind.HASH, SignalKind.DATA, SignalKind.MU, SignalKind.SWAP}
    if unknown:
        raise ProtocolViolation(f"{label(key)} cannot handle {sorted(u.value for u in unknown)}")
    hashes = by_kind.get(SignalKind.HASH, [])
    datas = by_kind.get(SignalKind.DATA, [])
    mus = by_kind.get(SignalKind.MU, [])
    if len(hashes) > 1 or len(datas) > 1:
        raise ProtocolViolation(f"{label(key)} got conflicting control signals in cycle {state.cycle}")
    if hashes:
        _data_mode(state, cell, hashes[0], out)
    if datas:
        _size_reduction(state, cell, datas[0], mus, out)
    elif mus:
        raise ProtocolViolation(f"{label(key)} got mu without data in cycle {state.cycle}")
    for s in by_kind.get(SignalKind.SWAP, []):
        cell.held.append(s)
    if cell.held and not _try_held(state, cell, out):
        state.waiting.add(key)


def _service_waiting(state: ArrayState, out: list):
    for key in sorted(state.waiting, key=lambda k: (str(k[0]), k[1:])):
        done = False
        if key[0] == "V":
            v = state.vcells[key[1]]
            if v.request:
                done = _fire_vectoring(state, v, out)
            elif v.wave_pending:
                k = v.k
                v.wave_pending = False
                emit(state, out, SignalKind.SWAP, ("wave", k, "up"), ("V", k), (k - 1, k))
                emit(state, out, SignalKind.SWAP, ("wave", k, "down"), ("V", k), (k, k))
                done = True
        else:
            done = _try_held(state, state.cells[key[0]][key[1]], out)
        if done:
            state.waiting.discard(key)
        if key[0] == "V" and state.vcells[key[1]].wave_pending:
            state.waiting.add(key)


def step_cycle(state: ArrayState) -> ArrayState:
    """Advance one normalized cycle: deliver last cycle's signals, fire cells, queue outputs."""
    arrivals = state.in_flight
    state.cycle += 1
    out: list = []
    pending = sorted(state.waiting, key=lambda k: (str(k[0]), k[1:]))
    inbox: dict = {}
    for s in arrivals:
        inbox.setdefault(s.dst, []).append(s)
    for c_row in state.cells:
        for c in c_row:
            c.mode = Mode.IDLE
    # waiting cells act first on state carried over from the previous cycle
    state.waiting = set(pending)
    _service_waiting(state, out)
    for key, sigs in inbox.items():
        if key is None or isinstance(key, str):
            state.outputs.append(sigs)
            continue
        _dispatch(state, key, sigs, out)
    # a vectoring cell that just fired queues its swap wave for the next cycle
    for k, v in state.vcells.items():
        if v.wave_pending and v.fired_cycle == state.cycle:
            state.waiting.add(("V", k))
    if state.controller is not None:
        state.controller.on_cycle_end(state, out)
    state.in_flight = out
    return state
