"""Quantum state diffusion trajectories for a single Lindblad channel.

One step of the scheme (dimensionless, hbar = 1)::

    d psi = -i H(t) psi dt
            + (<K^dag> K - K^dag K / 2 - |<K>|^2 / 2) psi dt
            + (K - <K>) psi dxi

followed by renormalization. With ``scheme="semi-implicit"`` the Hamiltonian
(static part plus the drive at the step midpoint) is taken with the
trapezoidal rule, a Cayley factor that is unitary and unconditionally stable;
the dissipative drift and the noise stay explicit Euler-Maruyama.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .fock import (
    DEFAULT_LEAKAGE_BOUND,
    DISPLACEMENT_TOL,
    FockState,
    TruncationError,
    coherent_state,
    displace_frame,
)
from .model import FrameOperators, QuantumModel

log = logging.getLogger(__name__)

SCHEMES = ("semi-implicit", "euler")
DEFAULT_ALPHA = complex(0.7, -0.2)


class TrajectoryAbort(RuntimeError):
    def __init__(self, message: str, period: int = -1, cause: str = ""):
        super().__init__(message)
        self.period = period
        self.cause = cause


class NoiseStream:
    """Complex Wiener increments from a seeded PCG64 stream.

    Increments are ``sqrt(dt/2) (g1 + i g2)`` with ``g1, g2`` consumed in
    order from the stream, so chunked and one-at-a-time draws agree.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def draw(self, n: int, dt: float) -> np.ndarray:
        g = self._rng.standard_normal(2 * n)
        self.counter += n
        return math.sqrt(dt / 2.0) * (g[0::2] + 1j * g[1::2])

    def draw_coarse(self, n: int, dt: float, refine: int) -> np.ndarray:
        """``n`` increments over ``dt`` each built by summing ``refine`` sub-increments."""
        if refine == 1:
            return self.draw(n, dt)
        fine = self.draw(n * refine, dt / refine)
        return fine.reshape(n, refine).sum(axis=1)


def sample_noise(stream: NoiseStream, dt: float) -> complex:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return complex(stream.draw(1, dt)[0])


@dataclass
class IntegratorConfig:
    steps_per_period: int = 4096
    scheme: str = "semi-implicit"
    recenter_threshold: float = 1.0
    moving_frame: bool = True
    cutoff: int = 64
    leakage_bound: float = DEFAULT_LEAKAGE_BOUND
    renormalize_every_step: bool = True
    fine_per_period: int = 32
    displacement_tol: float = DISPLACEMENT_TOL

    def __post_init__(self):
        if self.steps_per_period < 256:
            raise ValueError("steps_per_period must be >= 256")
        if not self.recenter_threshold > 0:
            raise ValueError("recenter_threshold must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.cutoff < 4:
            raise ValueError("cutoff must be >= 4")
        if not self.renormalize_every_step:
            raise ValueError("the integrator always renormalizes after each step")
        if self.fine_per_period < 1 or self.steps_per_period % self.fine_per_period:
            raise ValueError("fine_per_period must divide steps_per_period")


def default_cutoff(beta: float) -> int:
    if beta >= 0.5:
        return 96
    if beta >= 0.2:
        return 128
    return 400


@dataclass
class TrajectoryRecord:
    Gamma: float
    g: float
    Omega: float
    beta: float
    seed: int
    cutoff: int
    steps_per_period: int
    transient_periods: int
    strobe_period: np.ndarray
    strobe_t: np.ndarray
    strobe_q: np.ndarray
    strobe_p: np.ndarray
    strobe_energy: np.ndarray
    deficit_max: np.ndarray
    leakage_max: np.ndarray
    fine_t: np.ndarray
    fine_q: np.ndarray
    fine_p: np.ndarray
    fine_energy: np.ndarray
    frame_history: list = field(default_factory=list)

    @property
    def post_transient(self) -> np.ndarray:
        return self.strobe_period > self.transient_periods

    @property
    def fine_interval(self) -> float:
        return float(self.fine_t[1] - self.fine_t[0])


class Propagator:
    """Frame-aware stepper owning the operators for the current frame."""

    def __init__(self, model: QuantumModel, config: IntegratorConfig, dt: float):
        self.model = model
        self.config = config
        self.dt = dt
        self.implicit = config.scheme == "semi-implicit"
        self._frame: tuple[float, float] | None = None
        self.ops: FrameOperators | None = None
        self._stats = np.zeros(4)
        self._k = self._kdk = self._q = None

    def set_frame(self, q0: float, p0: float) -> None:
        if self._frame == (q0, p0):
            return
        ops = self.model.frame_operators(q0, p0)
        # the kernel takes K and Q tridiagonal, K^dag K pentadiagonal
        if ops.K.half_bandwidth > 1 or ops.drive_op.half_bandwidth > 1 or ops.KdK.half_bandwidth > 2:
            raise ValueError("Lindblad and drive operators must be tridiagonal")
        self._k = ops.K.widen(1)
        self._q = ops.drive_op.widen(1)
        self._kdk = ops.KdK.widen(2)
        self.ops = ops
        self._frame = (q0, p0)

    def advance(self, state: FockState, t0: float, dxi: np.ndarray, recenter: bool) -> tuple[int, float, float, int]:
        """Run ``len(dxi)`` steps in place; stop early on recentering or failure."""
        self.set_frame(state.frame_q, state.frame_p)
        ops = self.ops
        thr = self.config.recenter_threshold if recenter else -1.0
        _kernels.qsd_chunk(
            state.amplitudes,
            ops.h_static.diags, ops.h_static.half_bandwidth,
            self._q, self._k, self._kdk,
            self.implicit,
            t0, self.dt, dxi.size,
            dxi,
            self.model.params.drive_amplitude, self.model.params.Omega,
            thr,
            self.config.leakage_bound,
            self._stats,
        )
        s = self._stats
        return int(s[2]), float(s[0]), float(s[1]), int(s[3])

    def observe(self, state: FockState) -> tuple[float, float, float]:
        """Physical ``<Q>, <P>, <H_D>``."""
        self.set_frame(state.frame_q, state.frame_p)
        amps = state.amplitudes
        a_val = _kernels.lower_expect(amps)
        e = _kernels.banded_expect(self.ops.energy.diags, self.ops.energy.half_bandwidth, amps)
        s2 = math.sqrt(2.0)
        return state.frame_q + s2 * a_val.real, state.frame_p + s2 * a_val.imag, float(e.real)


def qsd_step(
    state: FockState,
    t: float,
    model: QuantumModel,
    dt: float,
    dxi: complex,
    scheme: str = "semi-implicit",
    leakage_bound: float = DEFAULT_LEAKAGE_BOUND,
) -> tuple[FockState, float, float]:
    """One step from ``t`` to ``t + dt``; returns (new state, deficit, leakage)."""
    if abs(state.norm_sq - 1.0) > 1e-6:
        raise ValueError("qsd_step needs a normalized state")
    cfg = IntegratorConfig(scheme=scheme, cutoff=max(state.cutoff, 4), leakage_bound=leakage_bound)
    prop = Propagator(model, cfg, dt)
    out = state.copy()
    done, deficit, leak, flag = prop.advance(out, t, np.array([dxi], dtype=np.complex128), recenter=False)
    _raise_on_flag(flag, leak, -1, cfg)
    return out, deficit, leak


def _raise_on_flag(flag: int, leak: float, period: int, config: IntegratorConfig) -> None:
    if flag == _kernels.FLAG_LEAKAGE:
        raise TrajectoryAbort(
            f"truncation leakage {leak:.3g} exceeds {config.leakage_bound:g} in period {period}; "
            f"increase the cutoff ({config.cutoff})",
            period,
            "leakage",
        )
    if flag == _kernels.FLAG_NONFINITE:
        raise TrajectoryAbort(
            f"non-finite amplitudes in period {period}; dt is too large", period, "nonfinite"
        )


def frame_centroid(state: FockState) -> tuple[float, float]:
    a_val = _kernels.lower_expect(state.amplitudes) / state.norm_sq
    s2 = math.sqrt(2.0)
    return s2 * a_val.real, s2 * a_val.imag


def maybe_recenter(state: FockState, config: IntegratorConfig) -> FockState:
    """Move the frame origin to the centroid once it drifts past the threshold."""
    q, p = frame_centroid(state)
    if math.hypot(q, p) <= config.recenter_threshold:
        return state
    return displace_frame(state, q, p, config.displacement_tol, config.leakage_bound)


def initial_state(cutoff: int, alpha: complex = DEFAULT_ALPHA) -> FockState:
    return coherent_state(alpha, cutoff)[0]


def evolve(
    initial: FockState,
    model: QuantumModel,
    config: IntegratorConfig,
    periods_total: int,
    transient_periods: int,
    seed: int,
    noise_refine: int = 1,
) -> TrajectoryRecord:
    """Integrate one trajectory, strobing at every drive period.

    ``noise_refine > 1`` builds each increment from that many finer draws, so
    a run at ``steps_per_period * r`` with ``noise_refine=1`` follows the same
    Brownian path as one at ``steps_per_period`` with ``noise_refine=r``.
    """
    if periods_total <= transient_periods:
        raise ValueError("periods_total must exceed transient_periods")
    if initial.cutoff != config.cutoff:
        raise ValueError("initial state cutoff differs from config.cutoff")
    period = model.params.period
    spp = config.steps_per_period
    dt = period / spp
    stride = spp // config.fine_per_period
    prop = Propagator(model, config, dt)
    noise = NoiseStream(seed)
    state = initial.copy()
    frames = []
    if config.moving_frame:
        try:
            state = maybe_recenter(state, config)
        except TruncationError as exc:
            raise TrajectoryAbort(str(exc), 0, "truncation") from exc
        if (state.frame_q, state.frame_p) != (initial.frame_q, initial.frame_p):
            frames.append((0.0, state.frame_q, state.frame_p))

    n_fine = periods_total * config.fine_per_period + 1
    fine = np.empty((n_fine, 4))
    strobes = np.empty((periods_total, 5))
    deficits = np.zeros(periods_total)
    leaks = np.zeros(periods_total)
    q, p, e = prop.observe(state)
    fine[0] = (0.0, q, p, e)
    fi = 1
    for k in range(periods_total):
        dxi = noise.draw_coarse(spp, dt, noise_refine)
        base = k * spp
        pos = 0
        max_def = 0.0
        max_leak = 0.0
        while pos < spp:
            stop = (pos // stride + 1) * stride
            done, dmax, lmax, flag = prop.advance(
                state, (base + pos) * dt, dxi[pos:stop], recenter=config.moving_frame
            )
            max_def = max(max_def, dmax)
            max_leak = max(max_leak, lmax)
            pos += done
            _raise_on_flag(flag, lmax, k + 1, config)
            if flag == _kernels.FLAG_RECENTER:
                try:
                    state = maybe_recenter(state, config)
                except TruncationError as exc:
                    raise TrajectoryAbort(str(exc), k + 1, "truncation") from exc
                frames.append(((base + pos) * dt, state.frame_q, state.frame_p))
            if pos == stop:
                q, p, e = prop.observe(state)
                fine[fi] = ((base + pos) * dt, q, p, e)
                fi += 1
        deficits[k] = max_def
        leaks[k] = max_leak
        t_k = (k + 1) * period
        strobes[k] = (k + 1, t_k, q, p, e)
    return TrajectoryRecord(
        Gamma=model.params.Gamma,
        g=model.params.g,
        Omega=model.params.Omega,
        beta=model.params.beta,
        seed=seed,
        cutoff=config.cutoff,
        steps_per_period=spp,
        transient_periods=transient_periods,
        strobe_period=strobes[:, 0].astype(np.int64),
        strobe_t=strobes[:, 1],
        strobe_q=strobes[:, 2],
        strobe_p=strobes[:, 3],
        strobe_energy=strobes[:, 4],
        deficit_max=deficits,
        leakage_max=leaks,
        fine_t=fine[:, 0],
        fine_q=fine[:, 1],
        fine_p=fine[:, 2],
        fine_energy=fine[:, 3],
        frame_history=frames,
    )
