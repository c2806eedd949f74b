"""Dimensionless quantum Duffing model: parameters, operators, energy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fock import BandedOperator, FockState, add_identity, build_standard_ops, combine, expectation, multiply


@dataclass(frozen=True)
class PhysicalParams:
    m: float
    omega0: float
    l: float
    gamma: float
    omega: float
    g: float
    hbar: float

    def __post_init__(self):
        for name in ("m", "omega0", "l", "omega", "hbar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma < 0 or self.g < 0:
            raise ValueError("gamma and g must be non-negative")


@dataclass(frozen=True)
class ModelParams:
    Gamma: float = 0.125
    g: float = 0.3
    Omega: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.Gamma < 0:
            raise ValueError("Gamma must be >= 0")
        if not self.Omega > 0:
            raise ValueError("Omega must be > 0")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.Omega

    @property
    def drive_amplitude(self) -> float:
        """Coefficient of ``Q cos(Omega t)`` in the Hamiltonian."""
        return -self.g / self.beta


@dataclass(frozen=True)
class WellGeometry:
    q_well: float
    barrier_energy: float
    well_depth: float
    well_frequency: float
    zero_point_ratio: float

    @property
    def single_well(self) -> bool:
        return self.zero_point_ratio >= 1.0


def reduce_params(p: PhysicalParams) -> ModelParams:
    return ModelParams(
        Gamma=p.gamma / p.omega0,
        g=p.g,
        Omega=p.omega / p.omega0,
        beta=math.sqrt(p.hbar / (p.m * p.l**2 * p.omega0)),
    )


def potential(Q, beta: float):
    Q = np.asarray(Q, dtype=float)
    return 0.25 * beta**2 * Q**4 - 0.5 * Q**2


def well_geometry(params: ModelParams) -> WellGeometry:
    beta = params.beta
    depth = -1.0 / (4.0 * beta**2)
    zero_point = 0.5 * math.sqrt(2.0)
    return WellGeometry(
        q_well=1.0 / beta,
        barrier_energy=0.0,
        well_depth=depth,
        well_frequency=math.sqrt(2.0),
        zero_point_ratio=zero_point / abs(depth),
    )


@lru_cache(maxsize=16)
def _ops(n: int):
    return build_standard_ops(n)


@dataclass(frozen=True)
class FrameOperators:
    """Operators acting on amplitudes expressed in a frame shifted by ``(q0, p0)``.

    ``h_static`` omits the scalar part (a global phase); ``energy`` keeps it
    so ``<energy>`` is the physical system energy. ``K`` is the frame-local
    Lindblad operator; its constant shift lives in ``h_static``.
    """

    h_static: BandedOperator
    drive_op: BandedOperator
    K: BandedOperator
    KdK: BandedOperator
    energy: BandedOperator
    q0: float = 0.0
    p0: float = 0.0


class QuantumModel:
    """Generator ``H(t) = H_static + c(t) Q`` with one Lindblad channel ``K``."""

    params: ModelParams
    cutoff: int

    def drive(self, t: float) -> float:
        return self.params.drive_amplitude * math.cos(self.params.Omega * t)

    def frame_operators(self, q0: float = 0.0, p0: float = 0.0) -> FrameOperators:
        raise NotImplementedError

    def _lindblad(self) -> tuple[BandedOperator, BandedOperator]:
        ops = _ops(self.cutoff)
        G = self.params.Gamma
        k = combine([(math.sqrt(G), ops["Q"]), (1j * math.sqrt(G), ops["P"])], hermitian=False, name="K")
        kdk = multiply(k.dagger(), k)
        return k, BandedOperator(kdk.diags, True, "KdK")

    def _frame_lindblad_terms(self, q0: float, p0: float) -> list:
        """Hamiltonian terms that absorb the frame constant of the Lindblad operator.

        In a shifted frame ``K -> K + c`` with ``c = sqrt(Gamma)(q0 + i p0)``.
        The unravelling (and the master equation) is unchanged, up to a global
        phase, by keeping ``K`` and adding ``(i/2)(conj(c) K - c K^dag)`` to
        ``H``, which here equals ``Gamma (p0 Q - q0 P)``.
        """
        ops = _ops(self.cutoff)
        G = self.params.Gamma
        return [(G * p0, ops["Q"]), (-G * q0, ops["P"])]


class DuffingModel(QuantumModel):
    """Double-well Duffing oscillator with damping ``H_R`` and ``K = sqrt(Gamma)(Q + iP)``."""

    def __init__(self, params: ModelParams, cutoff: int):
        if cutoff < 2:
            raise ValueError("cutoff must be >= 2")
        self.params = params
        self.cutoff = cutoff
        ops = _ops(cutoff)
        b2 = params.beta**2
        self.H_D = combine(
            [(0.5, ops["P2"]), (0.25 * b2, ops["Q4"]), (-0.5, ops["Q2"])], hermitian=True, name="H_D"
        )
        self.H_R = combine([(0.5 * params.Gamma, ops["QP+PQ"])], hermitian=True, name="H_R")
        self.Q = ops["Q"]
        self.K, self.KdK = self._lindblad()

    def system_energy_op(self, q0: float = 0.0, p0: float = 0.0) -> BandedOperator:
        """``H_D`` evaluated at ``Q + q0, P + p0``, constant included."""
        ops = _ops(self.cutoff)
        b2 = self.params.beta**2
        terms = [
            (0.5, ops["P2"]),
            (p0, ops["P"]),
            (0.25 * b2, ops["Q4"]),
            (b2 * q0, ops["Q3"]),
            (1.5 * b2 * q0**2 - 0.5, ops["Q2"]),
            (b2 * q0**3 - q0, ops["Q"]),
        ]
        const = 0.5 * p0**2 + 0.25 * b2 * q0**4 - 0.5 * q0**2
        return add_identity(combine(terms, hermitian=True, name="H_D"), const)

    def frame_operators(self, q0: float = 0.0, p0: float = 0.0) -> FrameOperators:
        ops = _ops(self.cutoff)
        G = self.params.Gamma
        energy = self.system_energy_op(q0, p0)
        # H_R(Q+q0, P+p0) = G/2 (QP+PQ) + G p0 Q + G q0 P + const
        h = combine(
            [
                (1.0, energy),
                (0.5 * G, ops["QP+PQ"]),
                (G * p0, ops["Q"]),
                (G * q0, ops["P"]),
                *self._frame_lindblad_terms(q0, p0),
            ],
            hermitian=True,
            name="H_static",
        )
        h = add_identity(h, -(0.5 * p0**2 + 0.25 * self.params.beta**2 * q0**4 - 0.5 * q0**2))
        k, kdk = self._lindblad()
        return FrameOperators(h, ops["Q"], k, kdk, energy, q0, p0)


class LinearModel(QuantumModel):
    """Harmonic test model ``H = (P^2 + Q^2)/2 + H_R`` with the same ``K``; no drive."""

    def __init__(self, Gamma: float, cutoff: int, Omega: float = 1.0):
        self.params = ModelParams(Gamma=Gamma, g=0.0, Omega=Omega, beta=1.0)
        self.cutoff = cutoff

    def frame_operators(self, q0: float = 0.0, p0: float = 0.0) -> FrameOperators:
        ops = _ops(self.cutoff)
        G = self.params.Gamma
        energy = add_identity(
            combine([(0.5, ops["P2"]), (0.5, ops["Q2"]), (q0, ops["Q"]), (p0, ops["P"])], hermitian=True),
            0.5 * (q0**2 + p0**2),
        )
        h = combine(
            [
                (0.5, ops["P2"]),
                (0.5, ops["Q2"]),
                (q0 + G * p0, ops["Q"]),
                (p0 + G * q0, ops["P"]),
                (0.5 * G, ops["QP+PQ"]),
                *self._frame_lindblad_terms(q0, p0),
            ],
            hermitian=True,
            name="H_static",
        )
        k, kdk = self._lindblad()
        return FrameOperators(h, ops["Q"], k, kdk, energy, q0, p0)


def build_model(params: ModelParams, n: int) -> DuffingModel:
    return DuffingModel(params, n)


def energy(state: FockState, model: DuffingModel) -> float:
    """Physical ``<H_D>``; the frame offset is folded into the operator."""
    op = model.system_energy_op(state.frame_q, state.frame_p)
    return float(expectation(state, op).real)


def total_energy(state: FockState, model: DuffingModel, t: float) -> float:
    """Physical ``<H_D + H_ex(t)>`` for comparison with :func:`energy`."""
    ops = _ops(model.cutoff)
    e = energy(state, model)
    q = state.frame_q + float(expectation(state, ops["Q"]).real)
    return e + model.drive(t) * q
