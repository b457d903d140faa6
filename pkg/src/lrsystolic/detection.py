"""MIMO channel model and detectors: ZF, MMSE, LR-aided linear/SIC, and ML.

Every detector has a single-vector form (``zf_detect(h, y, const)`` and
friends) and a stacked form used by the Monte-Carlo harness. The stacked
forms take arrays with a leading trial axis ``B``; the single-vector forms
are thin wrappers around them so both share one code path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import NotReduced, RankDeficient, SearchSpaceTooLarge, ZeroDiagonal
from .linalg import QRFactors, as_complex_matrix, qr_batch, round_gaussian, round_half_away
from .reduction import ReductionOutcome, ReductionParams, reduce, reduce_channel

ML_CANDIDATE_LIMIT = 10**6


class DetectorKind(str, Enum):
    ZF = "zf"
    MMSE = "mmse"
    LR_ZF = "lr-zf"
    LR_MMSE = "lr-mmse"
    LR_ZF_SIC = "lr-zf-sic"
    LR_MMSE_SIC = "lr-mmse-sic"
    ML = "ml"

    @property
    def lattice_reduced(self) -> bool:
        return self.value.startswith("lr-")

    @property
    def uses_mmse(self) -> bool:
        return "mmse" in self.value

    @property
    def sic(self) -> bool:
        return self.value.endswith("-sic")


def _gray_to_binary(g: int) -> int:
    b = 0
    while g:
        b ^= g
        g >>= 1
    return b


@dataclass(frozen=True)
class QamConstellation:
    """Square M-QAM with unit average energy and per-axis Gray labels.

    Points map to the Gaussian-integer box ``{0..side-1} + i{0..side-1}``
    through ``z = (x + offset) / step``.
    """

    order: int = 4

    def __post_init__(self):
        side = math.isqrt(self.order)
        if side * side != self.order or side < 2 or side & (side - 1):
            raise ValueError(f"square M-QAM with M a power of 4 required, got {self.order}")

    @property
    def side(self) -> int:
        return math.isqrt(self.order)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(2.0 * (self.order - 1) / 3.0)

    @property
    def step(self) -> float:
        return 2.0 * self.scale

    @property
    def offset(self) -> complex:
        return self.scale * (self.side - 1) * (1 + 1j)

    @cached_property
    def points(self) -> np.ndarray:
        """All points, index ``side * level_re + level_im``."""
        lv = np.arange(self.side)
        z = (lv[:, None] + 1j * lv[None, :]).ravel()
        return self.from_lattice(z)

    @cached_property
    def _level_bits(self) -> np.ndarray:
        # row l holds the Gray label bits (MSB first) of amplitude level l
        k = self.bits_per_symbol // 2
        gray = [lvl ^ (lvl >> 1) for lvl in range(self.side)]
        return np.array([[(g >> (k - 1 - b)) & 1 for b in range(k)] for g in gray], dtype=np.int8)

    @cached_property
    def _bits_to_level(self) -> np.ndarray:
        return np.array([_gray_to_binary(g) for g in range(self.side)])

    def to_lattice(self, x):
        return (np.asarray(x) + self.offset) / self.step

    def from_lattice(self, z):
        return np.asarray(z) * self.step - self.offset

    def clip_lattice(self, z):
        """Clamp each component into the box, then round to the lattice."""
        hi = self.side - 1
        re = np.clip(round_half_away(np.real(z)), 0, hi)
        im = np.clip(round_half_away(np.imag(z)), 0, hi)
        return re + 1j * im

    def quantize(self, x):
        """Nearest constellation point, per entry."""
        return self.from_lattice(self.clip_lattice(self.to_lattice(x)))

    def modulate(self, bits) -> np.ndarray:
        """Bits with trailing axis ``bits_per_symbol`` (I bits then Q bits) to symbols."""
        bits = np.asarray(bits, dtype=np.int64)
        k = self.bits_per_symbol // 2
        weights = 1 << np.arange(k - 1, -1, -1)
        gi = bits[..., :k] @ weights
        gq = bits[..., k:] @ weights
        lut = self._bits_to_level
        return self.from_lattice(lut[gi] + 1j * lut[gq])

    def demodulate(self, x) -> np.ndarray:
        z = self.clip_lattice(self.to_lattice(x))
        li = np.real(z).astype(np.int64)
        lq = np.imag(z).astype(np.int64)
        return np.concatenate([self._level_bits[li], self._level_bits[lq]], axis=-1)


def sigma2_from_ebn0(eb_n0_db: float, m: int, order: int) -> float:
    """Noise variance for a given Eb/N0 with unit-energy symbols on m streams."""
    return m / (10.0 ** (eb_n0_db / 10.0) * math.log2(order))


@dataclass(frozen=True)
class NoiseModel:
    eb_n0_db: float
    m: int
    order: int

    @property
    def sigma2(self) -> float:
        return sigma2_from_ebn0(self.eb_n0_db, self.m, self.order)


@dataclass
class ChannelInstance:
    h: np.ndarray
    sigma2: float = 0.0


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex Gaussian, unit variance per entry."""
    z = rng.standard_normal((2, *shape))
    return (z[0] + 1j * z[1]) * math.sqrt(0.5)


def sample_channel(rng: np.random.Generator, n: int, m: int, sigma2: float = 0.0) -> ChannelInstance:
    return ChannelInstance(complex_normal(rng, (n, m)), sigma2)


def transmit(rng: np.random.Generator, h, x, sigma2: float) -> np.ndarray:
    """``y = h x + noise`` with complex noise variance ``sigma2`` per entry; broadcasts over batches."""
    y = (np.asarray(h) @ np.asarray(x)[..., None])[..., 0]
    if sigma2 > 0:
        y = y + math.sqrt(sigma2) * complex_normal(rng, y.shape)
    return y


def extended_channel(h, sigma2: float) -> np.ndarray:
    """``[h; sigma I]`` for one matrix or a stack with leading axis."""
    h = np.asarray(h, dtype=np.complex128)
    m = h.shape[-1]
    lower = math.sqrt(sigma2) * np.broadcast_to(np.eye(m), (*h.shape[:-2], m, m))
    return np.concatenate([h, lower], axis=-2)


def extended_received(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128)
    return np.concatenate([y, np.zeros((*y.shape[:-1], m), dtype=np.complex128)], axis=-1)


def lattice_received(h_eff, y_eff, const: QamConstellation) -> np.ndarray:
    """Received vector shifted and scaled so the transmit side is Gaussian-integer."""
    h_eff = np.asarray(h_eff)
    ones = np.full(h_eff.shape[-1], const.offset)
    return (np.asarray(y_eff) + h_eff @ ones) / const.step


def _check_rank(h: np.ndarray):
    s = np.linalg.svd(h, compute_uv=False)
    if np.any(s[..., -1] < 1e-12 * s[..., 0]):
        raise RankDeficient("channel matrix is not full column rank")


def zf_detect_batch(h, y, const: QamConstellation) -> np.ndarray:
    h = np.asarray(h)
    _check_rank(h)
    xhat = np.einsum("bij,bj->bi", np.linalg.pinv(h), y)
    return const.quantize(xhat)


def mmse_equalize_batch(h, y, sigma2: float) -> np.ndarray:
    """Unquantized MMSE estimate computed as ZF on the extended model."""
    m = np.asarray(h).shape[-1]
    h_ext = extended_channel(h, sigma2)
    return np.einsum("bij,bj->bi", np.linalg.pinv(h_ext), extended_received(y, m))


def mmse_detect_batch(h, y, sigma2: float, const: QamConstellation) -> np.ndarray:
    if sigma2 == 0:
        return zf_detect_batch(h, y, const)
    return const.quantize(mmse_equalize_batch(h, y, sigma2))


def mmse_filter(h, sigma2: float) -> np.ndarray:
    """Direct ``(h^H h + sigma2 I)^-1 h^H``."""
    h = as_complex_matrix(h)
    g = h.conj().T @ h + sigma2 * np.eye(h.shape[1])
    return np.linalg.solve(g, h.conj().T)


def back_substitute(r, v) -> np.ndarray:
    """Solve ``r x = v`` for upper-triangular ``r`` row by row from the bottom.

    ``x_j = (v_j - sum_{i>j} r_ji x_i) / r_jj``, with the sum accumulated
    from ``i = m`` downward. ``r`` may be (m, m) or stacked (B, m, m) with
    ``v`` shaped to match.
    """
    r = np.asarray(r)
    v = np.asarray(v, dtype=np.complex128)
    m = r.shape[-1]
    x = np.zeros_like(v)
    for j in range(m - 1, -1, -1):
        acc = v[..., j]
        for i in range(m - 1, j, -1):
            acc = acc - r[..., j, i] * x[..., i]
        x[..., j] = acc / r[..., j, j]
    return x


def sic_layers(r, v) -> np.ndarray:
    """Layered integer decisions from the bottom row up, cancelling each decision."""
    r = np.asarray(r)
    v = np.array(v, dtype=np.complex128)
    m = r.shape[-1]
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    if np.any(diag < 1e-12):
        raise ZeroDiagonal("zero diagonal in SIC")
    z = np.zeros_like(v)
    for i in range(m - 1, -1, -1):
        z[..., i] = round_gaussian(v[..., i] / r[..., i, i])
        v[..., : i + 1] = v[..., : i + 1] - r[..., : i + 1, i] * z[..., i, None]
    return z


@dataclass
class ReducedBatch:
    """Stacked reduction outcomes for a batch of channels sharing one model."""

    q_h: np.ndarray
    r: np.ndarray
    t: np.ndarray
    outcomes: list


def stack_outcomes(outcomes) -> ReducedBatch:
    return ReducedBatch(
        np.stack([o.q_h for o in outcomes]),
        np.stack([o.r for o in outcomes]),
        np.stack([o.t for o in outcomes]),
        list(outcomes),
    )


def lr_detect_batch(reduced: ReducedBatch, y_lat, const: QamConstellation, sic: bool) -> np.ndarray:
    """LR-aided linear or SIC decision from reduced factors and lattice-domain input."""
    v = np.einsum("bij,bj->bi", reduced.q_h, y_lat)
    if sic:
        zq = sic_layers(reduced.r, v)
    else:
        zq = round_gaussian(back_substitute(reduced.r, v))
    z = np.einsum("bij,bj->bi", reduced.t, zq)
    return const.from_lattice(const.clip_lattice(z))


def effective_model(h, y, sigma2, mmse: bool):
    """Matrix and received vector the LR pipeline works on (extended for MMSE)."""
    if mmse:
        m = np.asarray(h).shape[-1]
        return extended_channel(h, sigma2), extended_received(y, m)
    return np.asarray(h, dtype=np.complex128), np.asarray(y, dtype=np.complex128)


def _single(fn, h, y, *args):
    return fn(np.asarray(h)[None], np.asarray(y)[None], *args)[0]


def zf_detect(h, y, const: QamConstellation) -> np.ndarray:
    return _single(zf_detect_batch, as_complex_matrix(h), y, const)


def mmse_detect(h, y, sigma2: float, const: QamConstellation) -> np.ndarray:
    return _single(mmse_detect_batch, as_complex_matrix(h), y, sigma2, const)


def _lr_single(h, y, params, const, sigma2, outcome, qrd, sic):
    h = as_complex_matrix(h)
    mmse = sigma2 is not None and sigma2 > 0
    h_eff, y_eff = effective_model(h, y, sigma2, mmse)
    if outcome is None:
        outcome = reduce_channel(h_eff, params or ReductionParams(), qrd)
    elif not isinstance(outcome, ReductionOutcome):
        raise NotReduced("expected a ReductionOutcome")
    if outcome.q_h.shape[1] != h_eff.shape[0]:
        raise NotReduced("reduction outcome does not match the detection model")
    y_lat = lattice_received(h_eff, y_eff, const)
    return lr_detect_batch(stack_outcomes([outcome]), y_lat[None], const, sic)[0]


def lr_linear_detect(h, y, params: ReductionParams | None, const: QamConstellation,
                     sigma2: float | None = None, outcome: ReductionOutcome | None = None,
                     qrd: str = "qrd") -> np.ndarray:
    """LR-aided ZF (``sigma2`` None or 0) or MMSE detection of one received vector.

    Pass ``outcome`` to reuse a reduction of the matching (possibly
    extended) channel; otherwise the channel is reduced with ``params``.
    """
    return _lr_single(h, y, params, const, sigma2, outcome, qrd, sic=False)


def lr_sic_detect(h, y, params: ReductionParams | None, const: QamConstellation,
                  sigma2: float | None = None, outcome: ReductionOutcome | None = None,
                  qrd: str = "qrd") -> np.ndarray:
    return _lr_single(h, y, params, const, sigma2, outcome, qrd, sic=True)


def ml_candidates(const: QamConstellation, m: int) -> np.ndarray:
    """All transmit vectors, first antenna most significant, points in index order."""
    if const.order**m > ML_CANDIDATE_LIMIT:
        raise SearchSpaceTooLarge(f"{const.order}^{m} candidates exceed {ML_CANDIDATE_LIMIT}")
    idx = np.array(list(itertools.product(range(const.order), repeat=m)))
    return const.points[idx]


def ml_detect_batch(h, y, const: QamConstellation) -> np.ndarray:
    """Exhaustive search; ties resolve to the lowest candidate index."""
    h = np.asarray(h)
    y = np.asarray(y)
    b, n, m = h.shape
    cand = ml_candidates(const, m)
    chunk = max(1, int(4e6 // (n * len(cand))))
    out = np.empty((b, m), dtype=np.complex128)
    for s in range(0, b, chunk):
        hx = np.einsum("bij,cj->bci", h[s:s + chunk], cand)
        d = np.sum(np.abs(y[s:s + chunk, None, :] - hx) ** 2, axis=-1)
        out[s:s + chunk] = cand[np.argmin(d, axis=1)]
    return out


def ml_detect(h, y, const: QamConstellation) -> np.ndarray:
    return _single(ml_detect_batch, as_complex_matrix(h), y, const)


def reduce_stack(h_eff, params: ReductionParams, qrd: str = "qrd") -> ReducedBatch:
    """Reduce every matrix in a stack (one Python-level reduction per channel)."""
    if qrd == "qrd":
        q_h, r = qr_batch(h_eff)
        outcomes = [reduce(QRFactors(q_h[b], r[b]), params) for b in range(len(r))]
    else:
        outcomes = [reduce_channel(h, params, qrd) for h in h_eff]
    return stack_outcomes(outcomes)


__all__ = [
    "DetectorKind", "QamConstellation", "NoiseModel", "ChannelInstance",
    "sigma2_from_ebn0", "sample_channel", "transmit", "complex_normal",
    "extended_channel", "extended_received", "lattice_received",
    "zf_detect", "mmse_detect", "mmse_filter", "mmse_equalize_batch",
    "back_substitute", "sic_layers", "lr_linear_detect", "lr_sic_detect",
    "ml_detect", "ml_detect_batch", "ml_candidates", "reduce_stack",
    "lr_detect_batch", "stack_outcomes", "effective_model",
]
