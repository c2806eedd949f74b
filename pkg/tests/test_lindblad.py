import math

import numpy as np
import pytest

from duffing_qsd.fock import BandedOperator, FockState, build_standard_ops, coherent_state, combine
from duffing_qsd.lindblad import (
    DensityMatrix,
    TraceDriftError,
    ensemble_reduce,
    evolve_density,
    master_rhs,
    shift_density,
)
from duffing_qsd.model import DuffingModel, FrameOperators, LinearModel, ModelParams, QuantumModel
from duffing_qsd.qsd import TrajectoryRecord

from conftest import LINEAR_GAMMA, LINEAR_OMEGA, linear_model, linear_reference

# DERIVED: dense RK4 oracle, beta = 1, Gamma = 0.3, g = 0.3, Omega = 1, N = 30,
# coherent start alpha = 0.7 - 0.2i, dt = period/8192 (dt/2 changes these by < 1e-13).
PINNED_Q = [
    -0.041579217703063734, -0.08783350013619955, -0.08496305732527848, -0.08500940936687619,
    -0.0850250299313787, -0.0850248519158512, -0.08502485998686614, -0.0850248690222999,
    -0.0850248702067738, -0.08502487041656323,
]
PINNED_ENERGY = [
    0.3639612111983452, 0.3456969977423958, 0.341324753537039, 0.34091467854528856,
    0.34085239959495445, 0.34083995274630247, 0.34083763240748116, 0.34083719702926657,
    0.34083711433441755, 0.340837098644339,
]


class DampingOnly(QuantumModel):
    """H = 0, K = sqrt(2 Gamma) a."""

    def __init__(self, Gamma, cutoff):
        self.params = ModelParams(Gamma=Gamma, g=0.0)
        self.cutoff = cutoff

    def frame_operators(self, q0=0.0, p0=0.0):
        ops = build_standard_ops(self.cutoff)
        G = self.params.Gamma
        z = BandedOperator(np.zeros((1, self.cutoff)), True)
        k = combine([(math.sqrt(2 * G), ops["a"])])
        kdk = combine([(2 * G, ops["N"])], hermitian=True)
        return FrameOperators(z, ops["Q"], k, kdk, z, q0, p0)


def random_rho(rng, n, rank=4):
    v = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = v @ v.conj().T
    return DensityMatrix(rho / np.trace(rho))


def test_master_rhs_trace_free_and_hermitian():
    rng = np.random.default_rng(3)
    model = DuffingModel(ModelParams(Gamma=0.3, g=0.3, beta=0.7), 24)
    for k in range(20):
        rho = random_rho(rng, 24)
        d = master_rhs(rho, 0.37 * k, model)
        assert abs(np.trace(d)) < 1e-12
        assert np.max(np.abs(d - d.conj().T)) < 1e-12


def test_master_rhs_cutoff_mismatch():
    with pytest.raises(ValueError):
        master_rhs(DensityMatrix(np.eye(10) / 10), 0.0, DuffingModel(ModelParams(), 12))


def test_number_decay_rate():
    G, n = 0.2, 10
    rho = DensityMatrix.pure(FockState.basis(1, n))
    d = master_rhs(rho, 0.0, DampingOnly(G, n))
    assert np.real(np.sum(np.arange(n) * np.diag(d))) == pytest.approx(-2 * G, abs=1e-14)


def test_linear_model_matches_analytic():
    model = linear_model()
    c, _ = coherent_state(complex(0.7, -0.2), model.cutoff)
    period = 2 * math.pi / LINEAR_OMEGA
    dt = period / 1000
    cps = [k * dt * 50 for k in range(21)]
    series = evolve_density(DensityMatrix.pure(c), model, dt, period, cps)
    assert np.abs(series.q - linear_reference(series.t)).max() < 1e-6


def test_unitary_evolution_keeps_purity():
    model = DuffingModel(ModelParams(Gamma=0.0, g=0.3, beta=1.0), 30)
    c, _ = coherent_state(0.5, 30)
    dt = model.params.period / 8192
    series = evolve_density(DensityMatrix.pure(c), model, dt, model.params.period, [k * 1024 * dt for k in range(9)])
    assert np.abs(series.purity - 1.0).max() < 1e-8


def test_trace_drift_guard():
    model = DuffingModel(ModelParams(Gamma=0.3, g=0.3, beta=1.0), 30)
    c, _ = coherent_state(0.5, 30)
    with pytest.raises(TraceDriftError):
        evolve_density(DensityMatrix.pure(c), model, 1.0, 10.0, [])


def test_checkpoint_grid_and_size_guards():
    model = DuffingModel(ModelParams(beta=1.0), 10)
    rho = DensityMatrix.pure(FockState.basis(0, 10))
    with pytest.raises(ValueError):
        evolve_density(rho, model, 0.1, 1.0, [0.05])
    with pytest.raises(ValueError):
        evolve_density(DensityMatrix(np.eye(201) / 201), DuffingModel(ModelParams(), 201), 0.1, 1.0, [])


def test_pinned_duffing_oracle():
    p = ModelParams(Gamma=0.3, g=0.3, Omega=1.0, beta=1.0)
    model = DuffingModel(p, 30)
    c, _ = coherent_state(complex(0.7, -0.2), 30)
    cps = [k * p.period for k in range(1, 11)]
    series = evolve_density(DensityMatrix.pure(c), model, p.period / 4096, 10 * p.period, cps)
    assert np.allclose(series.q, PINNED_Q, rtol=0, atol=1e-9)
    assert np.allclose(series.energy, PINNED_ENERGY, rtol=0, atol=1e-9)
    series.final.check()


def test_frame_offset_consistency():
    # the same physical state evolved in two static frames; the cutoff is
    # large enough that truncation does not distinguish the two
    p = ModelParams(Gamma=0.3, g=0.3, Omega=1.0, beta=0.5)
    model = DuffingModel(p, 60)
    c, _ = coherent_state(complex(0.7, -0.2), 60)
    rho = DensityMatrix.pure(c)
    dt = p.period / 8192
    cps = [k * 1024 * dt for k in range(9)]
    a = evolve_density(rho, model, dt, p.period, cps)
    b = evolve_density(shift_density(rho, 0.8, -0.3), model, dt, p.period, cps)
    for name in ("q", "p", "energy"):
        assert np.abs(getattr(a, name) - getattr(b, name)).max() < 1e-8, name

    lin = linear_model()
    c, _ = coherent_state(complex(0.7, -0.2), lin.cutoff)
    rho = DensityMatrix.pure(c)
    cps = [k * 1.0 for k in range(11)]
    a = evolve_density(rho, lin, 0.005, 10.0, cps)
    b = evolve_density(shift_density(rho, 0.8, -0.3), lin, 0.005, 10.0, cps)
    assert np.abs(a.q - b.q).max() < 1e-8 and np.abs(a.p - b.p).max() < 1e-8


def _record(fine_t, q, p, e, seed=0):
    z = np.zeros(1)
    return TrajectoryRecord(
        Gamma=0.3, g=0.3, Omega=1.0, beta=1.0, seed=seed, cutoff=10, steps_per_period=4096,
        transient_periods=0, strobe_period=np.array([1]), strobe_t=np.array([2 * math.pi]),
        strobe_q=z, strobe_p=z, strobe_energy=z, deficit_max=z, leakage_max=z,
        fine_t=np.asarray(fine_t, float), fine_q=np.asarray(q, float), fine_p=np.asarray(p, float),
        fine_energy=np.asarray(e, float), frame_history=[],
    )


def test_ensemble_reduce_single_and_constant():
    t = np.linspace(0, 1, 11)
    one = _record(t, np.sin(t), np.cos(t), t)
    s = ensemble_reduce([one], t[::2])
    assert np.array_equal(s.mean_q, np.sin(t[::2])) and np.all(s.se_q == 0) and s.count == 1
    recs = [_record(t, np.full(11, 0.25), np.full(11, -1.0), np.full(11, 2.0), seed=k) for k in range(7)]
    s = ensemble_reduce(recs, t)
    assert np.allclose(s.mean_q, 0.25, rtol=0, atol=1e-15) and np.allclose(s.se_q, 0, atol=1e-15)
    assert np.allclose(s.mean_energy, 2.0, rtol=0, atol=1e-15)


def test_ensemble_reduce_grid_errors():
    t = np.linspace(0, 1, 11)
    a = _record(t, t, t, t)
    b = _record(np.linspace(0, 1.1, 11), t, t, t)
    with pytest.raises(ValueError):
        ensemble_reduce([a, b], t)
    with pytest.raises(ValueError):
        ensemble_reduce([a], [0.05])
    with pytest.raises(ValueError):
        ensemble_reduce([], t)


def test_ensemble_error_scales_as_inverse_sqrt_m(linear_ensemble):
    # mean-square error of group means against the analytic curve, pooled over 10 checkpoints
    cps = np.arange(1, 11, dtype=float)
    ref = linear_reference(cps)

    def mse(m):
        groups = [linear_ensemble[i : i + m] for i in range(0, len(linear_ensemble), m)]
        return np.mean([np.mean((ensemble_reduce(g, cps).mean_q - ref) ** 2) for g in groups])

    ratio = math.sqrt(mse(125) / mse(500))
    assert ratio == pytest.approx(2.0, rel=0.3)


def test_linear_model_gamma_matches_fixture():
    assert LinearModel(LINEAR_GAMMA, 8).params.Gamma == LINEAR_GAMMA
