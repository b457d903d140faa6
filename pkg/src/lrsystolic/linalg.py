"""Complex dense-matrix helpers and Givens-rotation QR decompositions.

Matrices are plain ``numpy`` complex128 arrays. The QR routines return
``Q^H`` rather than ``Q`` because every consumer (reduction, the systolic
array, detection) works with the conjugate-transposed factor directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonInteger, RankDeficient, ShapeMismatch

RANK_TOL = 1e-12
INTEGER_TOL = 1e-9


@dataclass
class QRFactors:
    """``q_h @ h == r`` with ``q_h`` of shape (m, n) and ``r`` upper triangular (m, m)."""

    q_h: np.ndarray
    r: np.ndarray

    @property
    def m(self) -> int:
        return self.r.shape[0]

    @property
    def n(self) -> int:
        return self.q_h.shape[1]

    def copy(self) -> "QRFactors":
        return QRFactors(self.q_h.copy(), self.r.copy())


def as_complex_matrix(a) -> np.ndarray:
    a = np.array(a, dtype=np.complex128)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf")
    return a


def hermitian(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a.real**2 + a.imag**2)))


def round_half_away(x):
    """Nearest integer, ties away from zero. Works on floats and arrays."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_gaussian(z):
    """Component-wise nearest Gaussian integer (ties away from zero)."""
    if isinstance(z, (complex, float, int)):
        z = complex(z)
        return complex(_round_scalar(z.real), _round_scalar(z.imag))
    z = np.asarray(z)
    return round_half_away(z.real) + 1j * round_half_away(z.imag)


def _round_scalar(x: float) -> float:
    if x >= 0:
        return float(math.floor(x + 0.5))
    return -float(math.floor(-x + 0.5))


def _rotation_zeroing(a: complex, b: complex):
    """Coefficients (c, s) of [[c, s], [-conj(s), c]] mapping (a, b) to (*, 0)."""
    h = math.sqrt(a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag)
    abs_a = abs(a)
    if abs_a == 0.0:
        return 0.0, b.conjugate() / h
    phase = a / abs_a
    return abs_a / h, phase * b.conjugate() / h


def _triangularize(h: np.ndarray, sort: bool):
    a = as_complex_matrix(h).copy()
    n, m = a.shape
    if n < m:
        raise ShapeMismatch(f"need n >= m, got {n}x{m}")
    col_scale = max(float(np.max(np.linalg.norm(a, axis=0))), 0.0)
    q_h = np.eye(n, dtype=np.complex128)
    perm = np.arange(m)
    for j in range(m):
        if sort:
            residual = np.sum(np.abs(a[j:, j:]) ** 2, axis=0)
            pick = j + int(np.argmin(residual))
            if pick != j:
                a[:, [j, pick]] = a[:, [pick, j]]
                perm[[j, pick]] = perm[[pick, j]]
        for i in range(n - 1, j, -1):
            b = complex(a[i, j])
            if b == 0:
                continue
            c, s = _rotation_zeroing(complex(a[i - 1, j]), b)
            top, bot = a[i - 1, j:].copy(), a[i, j:].copy()
            a[i - 1, j:] = c * top + s * bot
            a[i, j:] = -np.conj(s) * top + c * bot
            qt, qb = q_h[i - 1].copy(), q_h[i].copy()
            q_h[i - 1] = c * qt + s * qb
            q_h[i] = -np.conj(s) * qt + c * qb
            a[i, j] = 0.0
    # phase-normalize so the diagonal is real and nonnegative
    for j in range(m):
        d = complex(a[j, j])
        mag = abs(d)
        if col_scale == 0.0 or mag < RANK_TOL * col_scale:
            raise RankDeficient(f"|r[{j},{j}]| = {mag:.3e} below rank tolerance")
        if d != mag:
            ph = d.conjugate() / mag
            a[j, j:] *= ph
            q_h[j] *= ph
            a[j, j] = mag
    r = np.triu(a[:m, :m])
    return QRFactors(q_h[:m].copy(), r), perm


def qr_givens(h) -> QRFactors:
    """QR decomposition by Givens rotations, ``q_h @ h == r``.

    The diagonal of ``r`` is made real and nonnegative. Raises
    ``RankDeficient`` when any ``|r_ii|`` falls below 1e-12 times the
    largest column norm.
    """
    return _triangularize(h, sort=False)[0]


def sorted_qr(h):
    """Sorted QR: at each step the remaining column of least residual norm goes next.

    Returns ``(factors, perm)`` with ``h[:, perm] == q_h^H @ r``. Ties keep
    the lower index.
    """
    return _triangularize(h, sort=True)


def permutation_matrix(perm) -> np.ndarray:
    """Matrix ``P`` with ``h @ P == h[:, perm]``."""
    m = len(perm)
    p = np.zeros((m, m), dtype=np.complex128)
    p[np.asarray(perm), np.arange(m)] = 1.0
    return p


# exact Gaussian-integer arithmetic on (re, im) pairs of Python ints

def _to_gaussian_ints(t) -> list:
    t = np.asarray(t, dtype=np.complex128)
    re, im = np.rint(t.real), np.rint(t.imag)
    dev = max(float(np.max(np.abs(t.real - re), initial=0.0)),
              float(np.max(np.abs(t.imag - im), initial=0.0)))
    if dev > INTEGER_TOL:
        raise NonInteger(f"entry deviates from the Gaussian-integer grid by {dev:.3e}")
    return [[(int(re[i, j]), int(im[i, j])) for j in range(t.shape[1])]
            for i in range(t.shape[0])]


def _gmul(x, y):
    return (x[0] * y[0] - x[1] * y[1], x[0] * y[1] + x[1] * y[0])


def _gsub(x, y):
    return (x[0] - y[0], x[1] - y[1])


def _gdiv_exact(x, y):
    num = _gmul(x, (y[0], -y[1]))
    den = y[0] * y[0] + y[1] * y[1]
    if num[0] % den or num[1] % den:
        raise ArithmeticError("inexact Gaussian-integer division")
    return (num[0] // den, num[1] // den)


def det_gaussian_integer(t) -> complex:
    """Exact determinant of a Gaussian-integer matrix (Bareiss elimination)."""
    t = np.asarray(t)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ShapeMismatch(f"square matrix required, got {t.shape}")
    a = _to_gaussian_ints(t)
    n = len(a)
    if n == 0:
        return 1 + 0j
    sign = 1
    prev = (1, 0)
    for k in range(n - 1):
        if a[k][k] == (0, 0):
            swap = next((i for i in range(k + 1, n) if a[i][k] != (0, 0)), None)
            if swap is None:
                return 0j
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                num = _gsub(_gmul(a[i][j], a[k][k]), _gmul(a[i][k], a[k][j]))
                a[i][j] = _gdiv_exact(num, prev)
        prev = a[k][k]
    d = a[n - 1][n - 1]
    return complex(sign * d[0], sign * d[1])


def gaussian_matmul_exact(a, b) -> list:
    """Exact product of two Gaussian-integer matrices as nested (re, im) pairs."""
    ga, gb = _to_gaussian_ints(a), _to_gaussian_ints(b)
    n, k, m = len(ga), len(gb), len(gb[0])
    out = []
    for i in range(n):
        row = []
        for j in range(m):
            acc = (0, 0)
            for p in range(k):
                x = _gmul(ga[i][p], gb[p][j])
                acc = (acc[0] + x[0], acc[1] + x[1])
            row.append(acc)
        out.append(row)
    return out


def is_unimodular(t) -> bool:
    """True when ``t`` is Gaussian-integer with determinant in {1, -1, i, -i}."""
    try:
        d = det_gaussian_integer(t)
    except NonInteger:
        return False
    return d in (1, -1, 1j, -1j)


def inverse_unimodular(t) -> np.ndarray:
    """Inverse of a unimodular matrix, verified exactly in integer arithmetic."""
    if not is_unimodular(t):
        raise NonInteger("matrix is not unimodular")
    t = np.asarray(t, dtype=np.complex128)
    inv = round_gaussian(np.linalg.solve(t, np.eye(t.shape[0])))
    prod = gaussian_matmul_exact(t, inv)
    n = t.shape[0]
    if any(prod[i][j] != ((1, 0) if i == j else (0, 0)) for i in range(n) for j in range(n)):
        raise ArithmeticError("floating-point inverse did not verify exactly")
    return inv


def qr_batch(h: np.ndarray):
    """Stacked QR of ``h`` with shape (B, n, m) via LAPACK, same normalization as ``qr_givens``.

    Returns ``(q_h, r)`` with shapes (B, m, n) and (B, m, m). The factors
    equal ``qr_givens`` up to rounding because the phase-normalized thin QR
    of a full-rank matrix is unique.
    """
    h = np.asarray(h, dtype=np.complex128)
    q, r = np.linalg.qr(h, mode="reduced")
    d = np.diagonal(r, axis1=1, axis2=2)
    mag = np.abs(d)
    scale = np.max(np.linalg.norm(h, axis=1), axis=1)
    if np.any(mag < RANK_TOL * scale[:, None]):
        raise RankDeficient("rank-deficient matrix in batch")
    ph = np.conj(d) / mag
    r = np.triu(r * ph[:, :, None])
    idx = np.arange(r.shape[1])
    r[:, idx, idx] = mag
    q_h = np.conj(q).transpose(0, 2, 1) * ph[:, :, None]
    return q_h, r
