"""Lattice-reduction-aided detection data flows on a reduced array.

Three flows run one after another on the registers left by the reduction:

* ``v = Q^H y``: the received vector enters from the top, skewed so that
  column ``j`` gets its entry at relative cycle ``j + 1``; partial sums move
  right and leave at the right edge. With the extended MMSE model the second
  half of ``y`` follows one cycle behind the first, each cell holding both
  folded ``q`` registers, and the host adds the two outputs.
* back-substitution: ``v_i`` enters row ``i`` from the right; partial sums
  move left towards ``D_ii``, which divides by ``r_ii`` and sends the
  estimate up its column. In SIC mode the super-diagonal cell rounds the
  estimate before using it, and the host rounds the top layer.
* ``T z``: the same top feed as the first flow on the ``t`` registers.

Rounding of the linear estimate and the final boundary clipping happen on
the host.
"""

from __future__ import annotations

import numpy as np

from ..detection import QamConstellation, effective_model, lattice_received
from ..errors import NotReduced, ProtocolViolation, ShapeMismatch, ZeroDiagonal
from ..linalg import round_gaussian
from .array import ZERO_TOL, ArrayState, Signal, SignalKind, _note, emit, label

HOST = "host"


def _run_flow(state: ArrayState, program, injections: dict) -> list:
    """Step a data flow until it drains; ``injections`` maps relative arrival cycle to signals."""
    start = state.cycle
    pending = dict(injections)
    in_flight: list = []
    outputs = []
    while in_flight or pending:
        state.cycle += 1
        rel = state.cycle - start
        arrivals = list(in_flight)
        for kind, payload, dst in pending.pop(rel, []):
            sig = Signal(kind, payload, None, dst, state.cycle - 1)
            if state.log is not None:
                state.log.add(state.cycle - 1, HOST, "send", {"kind": kind.value, "to": label(dst)})
            arrivals.append(sig)
        inbox: dict = {}
        for s in arrivals:
            inbox.setdefault(s.dst, []).append(s)
        out: list = []
        for dst, sigs in inbox.items():
            if dst == HOST:
                outputs.extend(s.payload for s in sigs)
            else:
                program(state, dst, sigs, out)
        in_flight = out
        if rel > 10 * (state.m + state.folds) + 10:
            raise ProtocolViolation("detection flow did not drain")
    return outputs


def _split(key, sigs, kinds):
    got = {k: {} for k in kinds}
    for s in sigs:
        if s.kind not in got:
            raise ProtocolViolation(f"{label(key)} cannot handle {s.kind.value} here")
        tag = s.payload[0]
        if tag in got[s.kind]:
            raise ProtocolViolation(f"{label(key)} got two {s.kind.value} signals for stream {tag}")
        got[s.kind][tag] = s
    return got


def _matvec_program(register: str):
    """Cell program for ``out_i = sum_j reg_ij * in_j`` with inputs from the top."""

    def program(state: ArrayState, key, sigs, out):
        i, j = key
        cell = state.cells[i][j]
        got = _split(key, sigs, (SignalKind.Y, SignalKind.PSUM))
        ys, sums = got[SignalKind.Y], got[SignalKind.PSUM]
        if set(sums) - set(ys) or (j > 0 and set(ys) != set(sums)):
            raise ProtocolViolation(f"{label(key)}: input and partial sum out of step")
        for l, ysig in ys.items():
            x = ysig.payload[1]
            coeff = cell.q[l] if register == "q" else cell.t
            prod = coeff * x
            acc = prod if j == 0 else sums[l].payload[1] + prod
            _note(state, key, "mac", {"stream": l})
            if i + 1 < state.m:
                emit(state, out, SignalKind.Y, ysig.payload, key, (i + 1, j))
            if j + 1 < state.m:
                emit(state, out, SignalKind.PSUM, (l, acc), key, (i, j + 1))
            else:
                emit(state, out, SignalKind.PSUM, (l, acc, i), key, HOST)

    return program


def _matvec(state: ArrayState, register: str, vectors) -> np.ndarray:
    """Run the top-fed flow for one or more streams; returns the summed outputs."""
    m = state.m
    inj: dict = {}
    for l, vec in enumerate(vectors):
        for j in range(m):
            inj.setdefault(1 + j + l, []).append((SignalKind.Y, (l, complex(vec[j])), (0, j)))
    outs = _run_flow(state, _matvec_program(register), inj)
    parts = np.zeros((len(vectors), m), dtype=np.complex128)
    for l, acc, i in outs:
        parts[l, i] = acc
    total = parts[0].copy()
    for l in range(1, len(vectors)):
        total = total + parts[l]
    return total


def _backsub_program(sic: bool):
    def program(state: ArrayState, key, sigs, out):
        i, j = key
        cell = state.cells[i][j]
        got = _split(key, sigs, (SignalKind.PSUM, SignalKind.XHAT))
        sums, xs = got[SignalKind.PSUM], got[SignalKind.XHAT]
        if len(sums) != 1 or len(xs) != (0 if i == j else 1):
            raise ProtocolViolation(f"{label(key)}: back-substitution inputs out of step")
        acc = sums[0].payload[1]
        if i == j:
            if abs(cell.r) < ZERO_TOL:
                raise ZeroDiagonal(f"|r[{i},{i}]| = {abs(cell.r):.3e}")
            x = acc / cell.r
            _note(state, key, "divide")
            emit(state, out, SignalKind.XHAT, (0, x, j), key, (i - 1, j) if i > 0 else HOST)
            return
        x = xs[0].payload[1]
        if sic and i == j - 1:
            x = round_gaussian(x)
            _note(state, key, "round")
        acc = acc - cell.r * x
        _note(state, key, "mac")
        emit(state, out, SignalKind.PSUM, (0, acc), key, (i, j - 1))
        emit(state, out, SignalKind.XHAT, (0, x, j), key, (i - 1, j) if i > 0 else HOST)

    return program


def _back_substitution(state: ArrayState, v: np.ndarray, sic: bool) -> np.ndarray:
    m = state.m
    inj: dict = {}
    for i in range(m):
        inj.setdefault(1 + (m - 1 - i), []).append((SignalKind.PSUM, (0, complex(v[i])), (i, m - 1)))
    outs = _run_flow(state, _backsub_program(sic), inj)
    x = np.zeros(m, dtype=np.complex128)
    for _, val, j in outs:
        x[j] = val
    return x


def run_lr_detection_on_array(state: ArrayState, y, const: QamConstellation, h=None,
                              sigma2: float | None = None, sic: bool = False) -> np.ndarray:
    """Detect one received vector with the factors held in a reduced array.

    ``h`` is the channel the array was reduced for (before MMSE extension);
    the host uses it to move ``y`` into the lattice domain. With ``sigma2``
    set the extended MMSE model is used, matching an array reduced from the
    extended channel. Returns the constellation points.
    """
    if not state.reduced:
        raise NotReduced("run the reduction before detection")
    m = state.m
    mmse = sigma2 is not None and sigma2 > 0
    if h is None:
        h = np.eye(m, dtype=np.complex128)
    h_eff, y_eff = effective_model(h, y, sigma2, mmse)
    if h_eff.shape != (state.width, m):
        raise ShapeMismatch(f"array holds a {state.width}x{m} model, got {h_eff.shape}")
    y_lat = lattice_received(h_eff, y_eff, const)
    padded = np.zeros(state.folds * m, dtype=np.complex128)
    padded[: state.width] = y_lat
    start = state.cycle
    v = _matvec(state, "q", padded.reshape(state.folds, m))
    est = _back_substitution(state, v, sic)
    z_q = round_gaussian(est)
    z = _matvec(state, "t", [z_q])
    state.last_detection = {"v": v, "estimate": est, "z_q": z_q, "z": z,
                            "cycles": state.cycle - start}
    return const.from_lattice(const.clip_lattice(z))
