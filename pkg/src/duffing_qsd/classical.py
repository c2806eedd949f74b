"""Classical forced Duffing oscillator: trajectories, sections, Lyapunov exponents.

    q'' + 2 Gamma q' + q^3 - q = g cos(Omega t)
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ModelParams


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassicalState:
    q: float
    p: float
    t: float = 0.0


@dataclass
class ClassicalTrajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    params: ModelParams
    strobe_only: bool

    def energy(self) -> np.ndarray:
        return classical_energy(self.q, self.p)


@dataclass
class LyapunovResult:
    lambda_max: float
    running: np.ndarray
    running_t: np.ndarray
    exponents: tuple[float, float] | None = None


def classical_energy(q, p):
    return 0.5 * np.asarray(p) ** 2 + 0.25 * np.asarray(q) ** 4 - 0.5 * np.asarray(q) ** 2


def classical_rhs(s: ClassicalState, params: ModelParams) -> tuple[float, float]:
    return s.p, -2.0 * params.Gamma * s.p + s.q - s.q**3 + params.g * math.cos(params.Omega * s.t)


@njit(cache=True)
def _f(q, p, t, G, g, W):
    return p, -2.0 * G * p + q - q * q * q + g * math.cos(W * t)


@njit(cache=True)
def _rk4(q, p, t, dt, G, g, W):
    k1q, k1p = _f(q, p, t, G, g, W)
    h = 0.5 * dt
    k2q, k2p = _f(q + h * k1q, p + h * k1p, t + h, G, g, W)
    k3q, k3p = _f(q + h * k2q, p + h * k2p, t + h, G, g, W)
    k4q, k4p = _f(q + dt * k3q, p + dt * k3p, t + dt, G, g, W)
    q += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return q, p


@njit(cache=True)
def _run(q, p, t0, dt, nsteps, stride, G, g, W, out):
    out[0, 0] = t0
    out[0, 1] = q
    out[0, 2] = p
    row = 1
    for j in range(nsteps):
        q, p = _rk4(q, p, t0 + j * dt, dt, G, g, W)
        if not (math.isfinite(q) and math.isfinite(p)):
            return -1
        if (j + 1) % stride == 0:
            out[row, 0] = t0 + (j + 1) * dt
            out[row, 1] = q
            out[row, 2] = p
            row += 1
    return row


@njit(cache=True)
def _tangent_f(q, p, t, vq, vp, G, g, W):
    dq, dp = _f(q, p, t, G, g, W)
    return dq, dp, vp, -2.0 * G * vp + (1.0 - 3.0 * q * q) * vq


@njit(cache=True)
def _benettin(q, p, t0, dt, nsteps, renorm, G, g, W, out):
    # state plus two tangent vectors, Gram-Schmidt every `renorm` steps
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    sums = np.zeros(2)
    blocks = nsteps // renorm
    h = 0.5 * dt
    for b in range(blocks):
        for j in range(renorm):
            t = t0 + (b * renorm + j) * dt
            # RK4 on the joint (state, tangent) system; tangents share the base-point stages
            k1q, k1p = _f(q, p, t, G, g, W)
            q2, p2 = q + h * k1q, p + h * k1p
            k2q, k2p = _f(q2, p2, t + h, G, g, W)
            q3, p3 = q + h * k2q, p + h * k2p
            k3q, k3p = _f(q3, p3, t + h, G, g, W)
            q4, p4 = q + dt * k3q, p + dt * k3p
            k4q, k4p = _f(q4, p4, t + dt, G, g, W)
            for m in range(2):
                vq, vp = v[m, 0], v[m, 1]
                a1q, a1p = vp, -2.0 * G * vp + (1.0 - 3.0 * q * q) * vq
                bq, bp = vq + h * a1q, vp + h * a1p
                a2q, a2p = bp, -2.0 * G * bp + (1.0 - 3.0 * q2 * q2) * bq
                bq, bp = vq + h * a2q, vp + h * a2p
                a3q, a3p = bp, -2.0 * G * bp + (1.0 - 3.0 * q3 * q3) * bq
                bq, bp = vq + dt * a3q, vp + dt * a3p
                a4q, a4p = bp, -2.0 * G * bp + (1.0 - 3.0 * q4 * q4) * bq
                v[m, 0] = vq + dt / 6.0 * (a1q + 2.0 * a2q + 2.0 * a3q + a4q)
                v[m, 1] = vp + dt / 6.0 * (a1p + 2.0 * a2p + 2.0 * a3p + a4p)
            q += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
            p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if not (math.isfinite(q) and math.isfinite(p)):
            return -1
        n0 = math.sqrt(v[0, 0] ** 2 + v[0, 1] ** 2)
        v[0, 0] /= n0
        v[0, 1] /= n0
        proj = v[1, 0] * v[0, 0] + v[1, 1] * v[0, 1]
        v[1, 0] -= proj * v[0, 0]
        v[1, 1] -= proj * v[0, 1]
        n1 = math.sqrt(v[1, 0] ** 2 + v[1, 1] ** 2)
        v[1, 0] /= n1
        v[1, 1] /= n1
        sums[0] += math.log(n0)
        sums[1] += math.log(n1)
        elapsed = (b + 1) * renorm * dt
        out[b, 0] = elapsed
        out[b, 1] = sums[0] / elapsed
        out[b, 2] = sums[1] / elapsed
    return blocks


def default_dt(params: ModelParams) -> float:
    return params.period / 1000


def integrate(
    s0: ClassicalState,
    params: ModelParams,
    dt: float | None = None,
    T: float = 0.0,
    strobe_only: bool = False,
) -> ClassicalTrajectory:
    """Fixed-step RK4. With ``strobe_only`` the step must divide the drive period."""
    dt = default_dt(params) if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be > 0")
    nsteps = int(round(T / dt))
    if strobe_only:
        stride = int(round(params.period / dt))
        if abs(stride * dt - params.period) > 1e-9 * params.period:
            raise ValueError("strobing needs dt to divide the drive period")
    else:
        stride = 1
    out = np.empty((nsteps // stride + 1, 3))
    rows = _run(s0.q, s0.p, s0.t, dt, nsteps, stride, params.Gamma, params.g, params.Omega, out)
    if rows < 0:
        raise DivergenceError("classical trajectory became non-finite")
    return ClassicalTrajectory(out[:rows, 0], out[:rows, 1], out[:rows, 2], params, strobe_only)


def final_state(traj: ClassicalTrajectory) -> ClassicalState:
    return ClassicalState(float(traj.q[-1]), float(traj.p[-1]), float(traj.t[-1]))


def lyapunov_spectrum(
    params: ModelParams,
    s0: ClassicalState = ClassicalState(0.0, 0.0),
    dt: float | None = None,
    T_total: float | None = None,
    renorm_interval: int = 100,
    transient_periods: int = 100,
) -> LyapunovResult:
    """Benettin estimate of both exponents; ``T_total`` defaults to 2000 periods."""
    dt = default_dt(params) if dt is None else dt
    T_total = 2000 * params.period if T_total is None else T_total
    s = s0
    if transient_periods:
        s = final_state(integrate(s0, params, dt, transient_periods * params.period, strobe_only=False))
    nsteps = int(round(T_total / dt))
    blocks = nsteps // renorm_interval
    out = np.empty((blocks, 3))
    done = _benettin(s.q, s.p, s.t, dt, nsteps, renorm_interval, params.Gamma, params.g, params.Omega, out)
    if done < 0:
        raise DivergenceError("trajectory diverged during Lyapunov estimate")
    l1, l2 = float(out[-1, 1]), float(out[-1, 2])
    return LyapunovResult(l1, out[:, 1].copy(), out[:, 0].copy(), (l1, l2))


def lyapunov_max(
    params: ModelParams,
    s0: ClassicalState = ClassicalState(0.0, 0.0),
    dt: float | None = None,
    T_total: float | None = None,
    renorm_interval: int = 100,
    transient_periods: int = 100,
) -> LyapunovResult:
    return lyapunov_spectrum(params, s0, dt, T_total, renorm_interval, transient_periods)
