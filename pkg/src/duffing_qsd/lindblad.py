"""Dense master-equation oracle and ensemble reductions of QSD trajectories."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .fock import FockState
from .model import QuantumModel

log = logging.getLogger(__name__)

MAX_DENSE_CUTOFF = 200


class TraceDriftError(RuntimeError):
    pass


@dataclass
class DensityMatrix:
    matrix: np.ndarray
    frame_q: float = 0.0
    frame_p: float = 0.0

    @property
    def cutoff(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, state: FockState) -> DensityMatrix:
        v = state.amplitudes
        return cls(np.outer(v, v.conj()), state.frame_q, state.frame_p)

    def check(self, herm_tol: float = 1e-10, trace_tol: float = 1e-10, eig_floor: float = -1e-8) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("density matrix is not hermitian")
        if abs(np.trace(m) - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace is {np.trace(m).real:.12g}")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < eig_floor:
            raise ValueError("density matrix has a negative eigenvalue")

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix.conj().T, self.matrix)))


@dataclass
class DenseGenerator:
    """Dense matrices of a model in one fixed frame."""

    A0: np.ndarray  # -i H_static - K^dag K / 2
    Q: np.ndarray
    K: np.ndarray
    Kd: np.ndarray
    energy: np.ndarray
    model: QuantumModel

    @classmethod
    def build(cls, model: QuantumModel, q0: float = 0.0, p0: float = 0.0) -> DenseGenerator:
        ops = model.frame_operators(q0, p0)
        k = ops.K.to_dense()
        a0 = -1j * ops.h_static.to_dense() - 0.5 * ops.KdK.to_dense()
        return cls(a0, ops.drive_op.to_dense(), k, k.conj().T.copy(), ops.energy.to_dense(), model)

    def rhs(self, rho: np.ndarray, t: float) -> np.ndarray:
        a = self.A0 - 1j * self.model.drive(t) * self.Q
        ar = a @ rho
        return ar + ar.conj().T + self.K @ rho @ self.Kd


def master_rhs(rho: DensityMatrix, t: float, model: QuantumModel) -> np.ndarray:
    """``d rho/dt = -i[H(t), rho] + K rho K^dag - {K^dag K, rho}/2`` (dense)."""
    if rho.cutoff != model.cutoff:
        raise ValueError(f"cutoff mismatch: rho {rho.cutoff}, model {model.cutoff}")
    gen = DenseGenerator.build(model, rho.frame_q, rho.frame_p)
    return gen.rhs(rho.matrix, t)


@dataclass
class ObservableSeries:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    purity: np.ndarray
    max_trace_drift: float
    final: DensityMatrix


def _observe(gen: DenseGenerator, rho: np.ndarray, q0: float, p0: float) -> tuple[float, float, float]:
    n = rho.shape[0]
    sq = np.sqrt(np.arange(1, n))
    a_val = np.sum(sq * np.diagonal(rho, offset=-1))  # tr(rho a) = sum_n sqrt(n) rho[n, n-1]
    s2 = math.sqrt(2.0)
    e = np.real(np.sum(gen.energy * rho.T))
    return q0 + s2 * a_val.real, p0 + s2 * a_val.imag, float(e)


def evolve_density(
    rho0: DensityMatrix,
    model: QuantumModel,
    dt: float,
    T: float,
    checkpoints: Sequence[float],
    trace_tol: float = 1e-8,
) -> ObservableSeries:
    """RK4 on the master equation, observing at ``checkpoints`` (on the ``dt`` grid)."""
    if rho0.cutoff > MAX_DENSE_CUTOFF:
        raise ValueError(f"dense oracle is limited to cutoff <= {MAX_DENSE_CUTOFF}")
    if rho0.cutoff != model.cutoff:
        raise ValueError("cutoff mismatch")
    marks = {}
    for c in checkpoints:
        k = int(round(c / dt))
        if abs(k * dt - c) > 1e-9 * max(1.0, abs(c)):
            raise ValueError(f"checkpoint {c} is not on the dt grid")
        marks[k] = c
    nsteps = int(round(T / dt))
    gen = DenseGenerator.build(model, rho0.frame_q, rho0.frame_p)
    rho = rho0.matrix.astype(np.complex128).copy()
    rows = []
    drift = 0.0

    def record(k):
        q, p, e = _observe(gen, rho, rho0.frame_q, rho0.frame_p)
        rows.append((marks[k], q, p, e, float(np.real(np.vdot(rho.conj().T, rho)))))
        DensityMatrix(rho).check(herm_tol=1e-8, trace_tol=1e-8, eig_floor=-1e-8)

    if 0 in marks:
        record(0)
    for k in range(nsteps):
        t = k * dt
        k1 = gen.rhs(rho, t)
        k2 = gen.rhs(rho + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = gen.rhs(rho + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = gen.rhs(rho + dt * k3, t + dt)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        step_drift = abs(tr - 1.0)
        if not math.isfinite(tr) or step_drift > trace_tol:
            raise TraceDriftError(f"trace drift {step_drift:.3g} at step {k}; dt is too large")
        drift = max(drift, step_drift)
        rho /= tr
        if k + 1 in marks:
            record(k + 1)
    if drift:
        log.debug("max per-step trace drift %.3g", drift)
    arr = np.array(rows).reshape(-1, 5)
    return ObservableSeries(
        arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], drift,
        DensityMatrix(rho, rho0.frame_q, rho0.frame_p),
    )


def shift_density(rho: DensityMatrix, dq: float, dp: float) -> DensityMatrix:
    """Same physical state in a frame shifted by ``(dq, dp)`` (dense exponential)."""
    n = rho.cutoff
    a = np.diag(np.sqrt(np.arange(1, n)), 1).astype(np.complex128)
    da = -complex(dq, dp) / math.sqrt(2.0)
    d = scipy.linalg.expm(da * a.conj().T - np.conj(da) * a)
    return DensityMatrix(d @ rho.matrix @ d.conj().T, rho.frame_q + dq, rho.frame_p + dp)


@dataclass
class EnsembleSummary:
    checkpoints: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    mean_energy: np.ndarray
    se_q: np.ndarray
    se_p: np.ndarray
    se_energy: np.ndarray
    count: int

    def within(self, series: ObservableSeries, n_se: float = 3.0) -> dict[str, np.ndarray]:
        """Per-observable boolean masks: ``|mean - oracle| < n_se * stderr``."""
        out = {}
        for name, mean, se, ref in (
            ("q", self.mean_q, self.se_q, series.q),
            ("p", self.mean_p, self.se_p, series.p),
            ("energy", self.mean_energy, self.se_energy, series.energy),
        ):
            out[name] = np.abs(mean - ref) < n_se * se
        return out


def _grid_index(t: np.ndarray, checkpoints: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(t, checkpoints - 1e-9)
    idx = np.clip(idx, 0, t.size - 1)
    if np.any(np.abs(t[idx] - checkpoints) > 1e-9 * np.maximum(1.0, np.abs(checkpoints))):
        raise ValueError("checkpoints do not lie on the records' sample grid")
    return idx


def ensemble_reduce(records, checkpoints: Sequence[float]) -> EnsembleSummary:
    """Mean and standard error of fine-sampled observables over trajectories.

    Summation runs in the order given, so the result is reproducible.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to reduce")
    cps = np.asarray(checkpoints, dtype=float)
    ref_t = records[0].fine_t
    rows = []
    for r in records:
        if r.fine_t.shape != ref_t.shape or np.any(r.fine_t != ref_t):
            raise ValueError("records have mismatched sample grids")
        idx = _grid_index(r.fine_t, cps)
        rows.append(np.stack([r.fine_q[idx], r.fine_p[idx], r.fine_energy[idx]]))
    data = np.stack(rows)  # (M, 3, C)
    m = data.shape[0]
    mean = data.sum(axis=0) / m
    if m > 1:
        se = np.sqrt(((data - mean) ** 2).sum(axis=0) / (m - 1) / m)
    else:
        se = np.zeros_like(mean)
    return EnsembleSummary(cps, mean[0], mean[1], mean[2], se[0], se[1], se[2], m)
