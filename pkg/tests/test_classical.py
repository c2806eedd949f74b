import math

import numpy as np
import pytest

from duffing_qsd.classical import (
    ClassicalState,
    DivergenceError,
    classical_energy,
    classical_rhs,
    integrate,
    lyapunov_max,
    lyapunov_spectrum,
)
from duffing_qsd.diagnostics import detect_crossings, tunneling_events
from duffing_qsd.model import ModelParams

CHAOTIC = ModelParams(Gamma=0.125, g=0.3, Omega=1.0)
REGULAR = ModelParams(Gamma=0.3, g=0.3, Omega=1.0)

# DERIVED references: Benettin over 5000 periods after a 100-period transient,
# start (0, 0), dt = period/1000, renormalization every 100 steps.
LAMBDA_CHAOTIC = 0.11686090280927043
LAMBDA_REGULAR = -0.2999898099684192


def test_rhs_fixed_points_and_drive():
    free = ModelParams(Gamma=0.3, g=0.0)
    assert classical_rhs(ClassicalState(1.0, 0.0), free) == (0.0, 0.0)
    assert classical_rhs(ClassicalState(0.0, 0.0), free) == (0.0, 0.0)
    assert classical_rhs(ClassicalState(0.0, 0.0, 0.0), ModelParams(g=0.3)) == (0.0, 0.3)


def test_beta_does_not_enter():
    s = ClassicalState(0.4, -0.2, 1.3)
    assert classical_rhs(s, ModelParams(beta=0.01)) == classical_rhs(s, ModelParams(beta=1.0))


def test_energy_conservation_undamped():
    params = ModelParams(Gamma=0.0, g=0.0)
    traj = integrate(ClassicalState(0.3, 0.9), params, T=100 * params.period)
    e = traj.energy()
    assert np.abs(e - e[0]).max() / abs(e[0]) < 1e-8


def test_energy_drift_convergence_order():
    # RK4 drift falls at least as dt^4; on this orbit the measured order is 5 (ratio ~31.8 per halving)
    params = ModelParams(Gamma=0.0, g=0.0)
    drifts = []
    for steps in (100, 200, 400):
        traj = integrate(ClassicalState(0.3, 0.9), params, dt=params.period / steps, T=20 * params.period)
        e = traj.energy()
        drifts.append(np.abs(e - e[0]).max())
    orders = np.log2(np.array(drifts[:-1]) / np.array(drifts[1:]))
    assert np.all(orders > 3.8)
    assert np.allclose(orders, 4.99, atol=0.05)


def test_time_reversal_undamped():
    params = ModelParams(Gamma=0.0, g=0.0)
    dt = params.period / 1000
    fwd = integrate(ClassicalState(0.5, 0.2), params, dt=dt, T=10 * params.period)
    back = integrate(ClassicalState(fwd.q[-1], -fwd.p[-1]), params, dt=dt, T=10 * params.period)
    assert abs(back.q[-1] - 0.5) < 1e-8 and abs(-back.p[-1] - 0.2) < 1e-8


def test_dissipative_relaxation():
    params = ModelParams(Gamma=0.3, g=0.0)
    traj = integrate(ClassicalState(2.0, 0.0), params, T=60 * params.period, strobe_only=True)
    assert min(abs(traj.q[-1] - 1), abs(traj.q[-1] + 1)) < 1e-6
    assert abs(traj.p[-1]) < 1e-6


def test_strobe_count():
    params = REGULAR
    traj = integrate(ClassicalState(0.0, 0.0), params, T=500 * params.period, strobe_only=True)
    # the initial point plus one per period
    assert traj.q.size == 501
    assert np.allclose(traj.t, params.period * np.arange(501), rtol=0, atol=1e-9)


def test_divergence_error():
    params = ModelParams(Gamma=0.0, g=0.0)
    with pytest.raises(DivergenceError):
        integrate(ClassicalState(1e3, 0.0), params, dt=1.0, T=100.0)


def test_lyapunov_signs_and_pinned_magnitudes():
    chaos = lyapunov_max(CHAOTIC, T_total=5000 * CHAOTIC.period)
    regular = lyapunov_max(REGULAR, T_total=5000 * REGULAR.period)
    assert chaos.lambda_max > 0.01
    assert regular.lambda_max < 0
    assert chaos.lambda_max == pytest.approx(LAMBDA_CHAOTIC, rel=1e-6)
    assert regular.lambda_max == pytest.approx(LAMBDA_REGULAR, rel=1e-6)
    assert chaos.running.size == chaos.running_t.size > 0


def test_lyapunov_fixed_point():
    res = lyapunov_max(ModelParams(Gamma=0.3, g=0.0), ClassicalState(0.3, 0.1))
    assert res.lambda_max < 0


@pytest.mark.parametrize("params", [CHAOTIC, REGULAR], ids=["chaotic", "regular"])
def test_lyapunov_sum_rule(params):
    l1, l2 = lyapunov_spectrum(params, T_total=2000 * params.period).exponents
    assert l1 + l2 == pytest.approx(-2 * params.Gamma, rel=0.05)


@pytest.mark.parametrize("params", [CHAOTIC, REGULAR], ids=["chaotic", "regular"])
def test_lyapunov_numerical_invariance(params):
    T = 5000 * params.period
    base = lyapunov_max(params, T_total=T).lambda_max
    half = lyapunov_max(params, dt=params.period / 2000, T_total=T).lambda_max
    wide = lyapunov_max(params, T_total=T, renorm_interval=200).lambda_max
    assert half == pytest.approx(base, rel=0.10)
    assert wide == pytest.approx(base, rel=0.10)


def test_classical_crossings_never_below_barrier():
    for params in (CHAOTIC, REGULAR):
        traj = integrate(ClassicalState(0.0, 0.0), params, T=600 * params.period)
        post = traj.t >= 100 * params.period
        events = detect_crossings(traj.t[post], traj.q[post], classical_energy(traj.q[post], traj.p[post]))
        assert tunneling_events(events) == []
        if params is CHAOTIC:
            assert len(events) > 0
        else:
            assert len(events) == 0
