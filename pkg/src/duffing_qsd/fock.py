"""Truncated Fock-space states and banded operators.

Operators are stored by diagonals: ``diags[k + b, i]`` holds the matrix entry
``M[i, i + k]`` for offsets ``k = -b .. b``. Entries that would fall outside
the matrix are kept at zero.

Convention: ``[Q, P] = i``, ``Q = (a + a^dag)/sqrt(2)``, ``P = i(a^dag - a)/sqrt(2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import poisson

from . import _kernels

DISPLACEMENT_TOL = 1e-12
COHERENT_TOL = 1e-8
DEFAULT_LEAKAGE_BOUND = 1e-6


class TruncationError(RuntimeError):
    """The Fock cutoff is too small for the requested state."""


class NormalizationError(ValueError):
    pass


@dataclass
class FockState:
    amplitudes: np.ndarray
    frame_q: float = 0.0
    frame_p: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.ndim != 1 or self.amplitudes.size < 2:
            raise ValueError("FockState needs a 1-d amplitude vector with cutoff >= 2")

    @property
    def cutoff(self) -> int:
        return self.amplitudes.size

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def leakage(self) -> float:
        """Population of the top two Fock levels."""
        return float(np.sum(np.abs(self.amplitudes[-2:]) ** 2))

    def copy(self) -> FockState:
        return FockState(self.amplitudes.copy(), self.frame_q, self.frame_p)

    @classmethod
    def basis(cls, n: int, cutoff: int) -> FockState:
        amps = np.zeros(cutoff, dtype=np.complex128)
        amps[n] = 1.0
        return cls(amps)


@dataclass(frozen=True)
class BandedOperator:
    diags: np.ndarray
    hermitian: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        d = np.array(self.diags, dtype=np.complex128)
        if d.ndim != 2 or d.shape[0] % 2 != 1:
            raise ValueError("diagonal array must have shape (2b+1, N)")
        if self.hermitian:
            _mirror_upper(d)
        d.setflags(write=False)
        object.__setattr__(self, "diags", d)

    @property
    def cutoff(self) -> int:
        return self.diags.shape[1]

    @property
    def half_bandwidth(self) -> int:
        return (self.diags.shape[0] - 1) // 2

    def entry(self, m: int, n: int) -> complex:
        k = n - m
        b = self.half_bandwidth
        if abs(k) > b:
            return 0j
        return complex(self.diags[k + b, m])

    def to_dense(self) -> np.ndarray:
        n, b = self.cutoff, self.half_bandwidth
        out = np.zeros((n, n), dtype=np.complex128)
        for k in range(-b, b + 1):
            rows = np.arange(max(0, -k), min(n, n - k))
            out[rows, rows + k] = self.diags[k + b, rows]
        return out

    @classmethod
    def from_dense(cls, mat: np.ndarray, b: int, hermitian: bool = False, name: str = "") -> BandedOperator:
        n = mat.shape[0]
        diags = np.zeros((2 * b + 1, n), dtype=np.complex128)
        for k in range(-b, b + 1):
            rows = np.arange(max(0, -k), min(n, n - k))
            diags[k + b, rows] = mat[rows, rows + k]
        return cls(diags, hermitian, name)

    def dagger(self) -> BandedOperator:
        n, b = self.cutoff, self.half_bandwidth
        out = np.zeros_like(self.diags)
        for k in range(-b, b + 1):
            rows = np.arange(max(0, -k), min(n, n - k))
            # (M^dag)[i+k, i] = conj(M[i, i+k])
            out[-k + b, rows + k] = np.conj(self.diags[k + b, rows])
        return BandedOperator(out, self.hermitian, self.name + "^dag")

    def widen(self, b: int) -> np.ndarray:
        """Diagonal array padded to half-bandwidth ``b``."""
        own = self.half_bandwidth
        if b < own:
            raise ValueError("cannot narrow a banded operator")
        out = np.zeros((2 * b + 1, self.cutoff), dtype=np.complex128)
        out[b - own : b + own + 1] = self.diags
        return out

    def __matmul__(self, other: BandedOperator) -> BandedOperator:
        return multiply(self, other)

    def __add__(self, other: BandedOperator) -> BandedOperator:
        return combine([(1.0, self), (1.0, other)])

    def __sub__(self, other: BandedOperator) -> BandedOperator:
        return combine([(1.0, self), (-1.0, other)])

    def scaled(self, c: complex) -> BandedOperator:
        herm = self.hermitian and complex(c).imag == 0.0
        return BandedOperator(self.diags * c, herm, self.name)


def _mirror_upper(d: np.ndarray) -> None:
    """Make a diagonal array exactly hermitian: lower band = conj(upper band), real diagonal."""
    b = (d.shape[0] - 1) // 2
    n = d.shape[1]
    d[b] = d[b].real
    for k in range(1, b + 1):
        # M[i+k, i] = conj(M[i, i+k])
        d[b - k, k:] = np.conj(d[b + k, : n - k])
        d[b - k, :k] = 0
        d[b + k, n - k :] = 0


def identity(n: int) -> BandedOperator:
    return BandedOperator(np.ones((1, n), dtype=np.complex128), True, "I")


def multiply(x: BandedOperator, y: BandedOperator) -> BandedOperator:
    """Exact banded product ``x @ y`` (bandwidths add)."""
    if x.cutoff != y.cutoff:
        raise ValueError(f"cutoff mismatch: {x.cutoff} vs {y.cutoff}")
    n, bx, by = x.cutoff, x.half_bandwidth, y.half_bandwidth
    b = bx + by
    out = np.zeros((2 * b + 1, n), dtype=np.complex128)
    # (xy)[i, i+k] = sum_j x[i, i+j] y[i+j, i+k]
    for j in range(-bx, bx + 1):
        for m in range(-by, by + 1):
            k = j + m
            rows = np.arange(max(0, -j, -k), min(n, n - j, n - k))
            if rows.size:
                out[k + b, rows] += x.diags[j + bx, rows] * y.diags[m + by, rows + j]
    herm = x.hermitian and y.hermitian and x is y
    return BandedOperator(out, herm)


def combine(terms, hermitian: bool | None = None, name: str = "") -> BandedOperator:
    """Linear combination ``sum c_k * op_k``; hermitian if all ops are and all c_k real."""
    terms = list(terms)
    b = max(op.half_bandwidth for _, op in terms)
    n = terms[0][1].cutoff
    out = np.zeros((2 * b + 1, n), dtype=np.complex128)
    herm = True
    for c, op in terms:
        if op.cutoff != n:
            raise ValueError("cutoff mismatch in combine")
        out += c * op.widen(b)
        herm = herm and op.hermitian and complex(c).imag == 0.0
    return BandedOperator(out, herm if hermitian is None else hermitian, name)


def add_identity(op: BandedOperator, c: complex) -> BandedOperator:
    b = op.half_bandwidth
    d = op.diags.copy()
    d[b] += c
    return BandedOperator(d, op.hermitian and complex(c).imag == 0.0, op.name)


def build_standard_ops(n: int) -> dict[str, BandedOperator]:
    """Ladder, number, quadrature and composite operators at cutoff ``n``."""
    if n < 2:
        raise ValueError("cutoff must be >= 2")
    sq = np.sqrt(np.arange(1, n, dtype=np.float64))
    a = np.zeros((3, n), dtype=np.complex128)
    a[2, :-1] = sq  # a[i, i+1] = sqrt(i+1)
    ad = np.zeros((3, n), dtype=np.complex128)
    ad[0, 1:] = sq  # a^dag[i, i-1] = sqrt(i)
    a_op = BandedOperator(a, False, "a")
    ad_op = BandedOperator(ad, False, "a^dag")
    num = BandedOperator(np.arange(n, dtype=np.complex128)[None, :], True, "N")

    s = 1.0 / math.sqrt(2.0)
    q = BandedOperator((a + ad) * s, True, "Q")
    p = BandedOperator(1j * (ad - a) * s, True, "P")
    q2 = multiply(q, q)
    p2 = multiply(p, p)
    q3 = multiply(q2, q)
    q4 = multiply(q2, q2)
    qp = multiply(q, p)
    pq = multiply(p, q)
    sym = combine([(1.0, qp), (1.0, pq)], hermitian=True, name="QP+PQ")
    return {
        "I": identity(n),
        "a": a_op,
        "a^dag": ad_op,
        "N": num,
        "Q": q,
        "P": p,
        "Q2": replace(q2, name="Q2"),
        "P2": replace(p2, name="P2"),
        "Q3": BandedOperator(q3.diags, True, "Q3"),
        "Q4": replace(q4, name="Q4"),
        "QP": qp,
        "PQ": pq,
        "QP+PQ": sym,
    }


def apply(op: BandedOperator, state: FockState) -> FockState:
    """Banded matrix-vector product; frame is carried over, norm is not touched."""
    if op.cutoff != state.cutoff:
        raise ValueError(f"cutoff mismatch: operator {op.cutoff}, state {state.cutoff}")
    out = np.empty_like(state.amplitudes)
    _kernels.banded_apply(op.diags, op.half_bandwidth, state.amplitudes, out)
    return FockState(out, state.frame_q, state.frame_p)


def expectation(state: FockState, op: BandedOperator) -> complex:
    """``<psi|op|psi>`` in the state's own frame."""
    nrm = state.norm_sq
    if abs(nrm - 1.0) > 1e-6:
        raise NormalizationError(f"state not normalized (norm^2 = {nrm:.3g})")
    if op.cutoff != state.cutoff:
        raise ValueError(f"cutoff mismatch: operator {op.cutoff}, state {state.cutoff}")
    val = _kernels.banded_expect(op.diags, op.half_bandwidth, state.amplitudes)
    if op.hermitian:
        return complex(val.real, 0.0) if abs(val.imag) < 1e-12 else val
    return val


def renormalize(state: FockState) -> tuple[FockState, float]:
    nrm = state.norm_sq
    if nrm == 0.0:
        raise NormalizationError("cannot renormalize the zero vector")
    if nrm == 1.0:
        return state.copy(), 0.0
    out = FockState(state.amplitudes / math.sqrt(nrm), state.frame_q, state.frame_p)
    return out, abs(1.0 - nrm)


def required_cutoff(alpha: complex) -> int:
    r = abs(alpha)
    return int(math.ceil(r * r + 8 * r))


def _cutoff_for_tail(alpha: complex, tol: float, start: int) -> int:
    """Smallest cutoff above ``start`` whose Poisson tail is within ``tol``."""
    m = start + 1
    while poisson.sf(m - 1, abs(alpha) ** 2) > tol:
        m += 1
    return m


def coherent_state(alpha: complex, n: int, tol: float = COHERENT_TOL) -> tuple[FockState, float]:
    """Coherent state ``|alpha>`` truncated to ``n`` levels.

    Returns the renormalized state and the norm deficit before renormalization.
    """
    if n < 2:
        raise ValueError("cutoff must be >= 2")
    amps = np.empty(n, dtype=np.complex128)
    amps[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for k in range(1, n):
        amps[k] = amps[k - 1] * alpha / math.sqrt(k)
    deficit = 1.0 - float(np.sum(np.abs(amps) ** 2))
    deficit = max(deficit, 0.0)
    if deficit > tol:
        raise TruncationError(
            f"coherent state alpha={alpha} loses {deficit:.3g} of its norm at cutoff {n}; "
            f"estimated required cutoff |alpha|^2 + 8|alpha| = {required_cutoff(alpha)}, "
            f"use a cutoff of at least {_cutoff_for_tail(alpha, tol, n)}"
        )
    state, _ = renormalize(FockState(amps))
    return state, deficit


def centroid(state: FockState, ops: dict[str, BandedOperator] | None = None) -> tuple[float, float]:
    """Physical ``(<Q>, <P>)`` including the frame offset."""
    a_val = _kernels.lower_expect(state.amplitudes) / state.norm_sq
    s2 = math.sqrt(2.0)
    return state.frame_q + s2 * a_val.real, state.frame_p + s2 * a_val.imag


def displace_vector(amps: np.ndarray, beta: complex, tol: float = DISPLACEMENT_TOL) -> np.ndarray:
    """Apply ``exp(beta a^dag - conj(beta) a)`` to an amplitude vector.

    Taylor series on ``s`` equal sub-steps, each truncated once a term drops
    below ``tol``; ``s`` keeps the per-substep generator norm below one.
    """
    n = amps.size
    if beta == 0:
        return amps.copy()
    gen_norm = abs(beta) * 2.0 * math.sqrt(n)
    steps = max(1, int(math.ceil(gen_norm)))
    sub = beta / steps
    out = np.ascontiguousarray(amps, dtype=np.complex128).copy()
    _kernels.displace_inplace(out, sub.real, sub.imag, steps, tol)
    return out


def displace_frame(
    state: FockState,
    dq: float,
    dp: float,
    tol: float = DISPLACEMENT_TOL,
    leakage_bound: float = DEFAULT_LEAKAGE_BOUND,
) -> FockState:
    """Express the same physical state in a frame shifted by ``(dq, dp)``."""
    if dq == 0.0 and dp == 0.0:
        return state.copy()
    nrm = state.norm_sq
    if abs(nrm - 1.0) > 1e-6:
        raise NormalizationError(f"state not normalized (norm^2 = {nrm:.3g})")
    dalpha = complex(dq, dp) / math.sqrt(2.0)
    amps = displace_vector(state.amplitudes, -dalpha, tol)
    out = FockState(amps, state.frame_q + dq, state.frame_p + dp)
    leak = out.leakage()
    if leak > leakage_bound:
        raise TruncationError(
            f"displacement by ({dq:.3g}, {dp:.3g}) leaves {leak:.3g} in the top two levels "
            f"at cutoff {state.cutoff}; increase the cutoff"
        )
    return out
