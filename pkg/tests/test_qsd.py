import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duffing_qsd.fock import BandedOperator, FockState, build_standard_ops, coherent_state, displace_frame, expectation
from duffing_qsd.model import DuffingModel, FrameOperators, LinearModel, ModelParams, QuantumModel, energy
from duffing_qsd.qsd import (
    IntegratorConfig,
    NoiseStream,
    Propagator,
    TrajectoryAbort,
    default_cutoff,
    evolve,
    frame_centroid,
    initial_state,
    maybe_recenter,
    qsd_step,
    sample_noise,
)


class NullModel(QuantumModel):
    """H = 0, K = 0."""

    def __init__(self, cutoff):
        self.params = ModelParams(Gamma=0.0, g=0.0)
        self.cutoff = cutoff

    def frame_operators(self, q0=0.0, p0=0.0):
        z = BandedOperator(np.zeros((1, self.cutoff)), True)
        ops = build_standard_ops(self.cutoff)
        return FrameOperators(z, ops["Q"], BandedOperator(np.zeros((1, self.cutoff))), z, z, q0, p0)


def test_noise_moments():
    z = NoiseStream(12345).draw(10**6, 1.0)
    assert abs(z.mean()) < 0.004
    assert abs((z**2).mean()) < 0.004
    assert abs((np.abs(z) ** 2).mean() - 1.0) < 0.004


def test_noise_zero_dt_and_determinism():
    assert sample_noise(NoiseStream(1), 0.0) == 0
    a = NoiseStream(99).draw(1000, 0.01)
    b = NoiseStream(99).draw(1000, 0.01)
    assert np.array_equal(a, b)
    s = NoiseStream(99)
    one_by_one = np.array([sample_noise(s, 0.01) for _ in range(1000)])
    assert np.array_equal(one_by_one, a)
    assert not np.array_equal(a, NoiseStream(100).draw(1000, 0.01))


def test_coarse_increments_are_sums_of_fine():
    fine = NoiseStream(5).draw(64, 0.5)
    coarse = NoiseStream(5).draw_coarse(32, 1.0, 2)
    assert np.allclose(coarse, fine[0::2] + fine[1::2], rtol=0, atol=1e-15)


def test_step_null_model_is_identity():
    c, _ = coherent_state(0.4 + 0.3j, 16)
    out, deficit, leak = qsd_step(c, 0.0, NullModel(16), 1e-3, 0.05 + 0.02j)
    assert np.allclose(out.amplitudes, c.amplitudes, rtol=0, atol=1e-15)
    assert deficit < 1e-15
    assert leak == pytest.approx(c.leakage(), rel=1e-12)


def test_stationary_eigenstate_without_damping():
    n = 16
    model = LinearModel(0.0, n)
    ops = build_standard_ops(n)
    state = FockState.basis(2, n)
    prop = Propagator(model, IntegratorConfig(cutoff=n, moving_frame=False), 1e-3)
    dxi = NoiseStream(3).draw(10**4, 1e-3)
    prop.advance(state, 0.0, dxi, recenter=False)
    assert expectation(state, ops["N"]).real == pytest.approx(2.0, abs=1e-8)
    assert abs(expectation(state, ops["Q"])) < 1e-8
    assert expectation(state, ops["Q2"]).real == pytest.approx(2.5, abs=1e-8)


@pytest.mark.parametrize("scheme", ["semi-implicit", "euler"])
def test_deficit_scales_linearly_in_dt(scheme):
    # independent single steps from a fixed non-Gaussian state, where Var(K) is O(1)
    model = DuffingModel(ModelParams(Gamma=0.3, beta=1.0), 40)
    start = FockState.basis(3, 40)
    medians = []
    for dt in (2e-4, 1e-4):
        prop = Propagator(model, IntegratorConfig(cutoff=40, scheme=scheme, moving_frame=False), dt)
        dxi = NoiseStream(11).draw(10**4, dt)
        deficits = np.empty(dxi.size)
        for k in range(dxi.size):
            _, deficits[k], _, _ = prop.advance(start.copy(), 0.0, dxi[k : k + 1], recenter=False)
        medians.append(np.median(deficits))
    assert medians[0] / medians[1] == pytest.approx(2.0, rel=0.2)


def test_step_reports_nonfinite():
    model = DuffingModel(ModelParams(Gamma=0.3, beta=1.0), 20)
    c, _ = coherent_state(0.3, 20)
    with pytest.raises(TrajectoryAbort) as info:
        qsd_step(c, 0.0, model, 1.0, complex(np.inf, 0))
    assert info.value.cause == "nonfinite"


def test_recenter_noop_at_origin():
    cfg = IntegratorConfig(cutoff=32)
    vac = FockState.basis(0, 32)
    out = maybe_recenter(vac, cfg)
    assert out is vac


def test_recenter_far_coherent_state():
    n = 80
    ops = build_standard_ops(n)
    c, _ = coherent_state(5 / math.sqrt(2), n)
    out = maybe_recenter(c, IntegratorConfig(cutoff=n, recenter_threshold=1.0))
    assert out.frame_q == pytest.approx(5.0, abs=1e-8) and out.frame_p == pytest.approx(0.0, abs=1e-8)
    assert expectation(out, ops["N"]).real < 1e-6
    q, p = frame_centroid(out)
    assert abs(q) < 1e-8 and abs(p) < 1e-8


def test_random_recenterings_preserve_energy():
    n = 64
    model = DuffingModel(ModelParams(beta=0.5), n)
    cfg = IntegratorConfig(cutoff=n, recenter_threshold=0.05)
    rng = np.random.default_rng(0)
    state, _ = coherent_state(0.6 - 0.4j, n)
    # a mildly non-Gaussian state so the check is not trivially a displaced vacuum
    state.amplitudes[3] += 0.1
    state.amplitudes /= np.linalg.norm(state.amplitudes)
    e0 = energy(state, model)
    for _ in range(1000):
        state = displace_frame(state, *rng.uniform(-0.2, 0.2, size=2))
        state = maybe_recenter(state, cfg)
        assert abs(energy(state, model) - e0) < 1e-6


def test_default_cutoffs():
    assert default_cutoff(1.0) == 96
    assert default_cutoff(0.3) == 128
    assert default_cutoff(0.1) == 400


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(steps_per_period=128)
    with pytest.raises(ValueError):
        IntegratorConfig(recenter_threshold=0)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="rk4")


def _short_run(seed, periods=12, transient=2, **kw):
    n = 128
    model = DuffingModel(ModelParams(Gamma=0.3, g=0.3, beta=0.3), n)
    cfg = IntegratorConfig(cutoff=n, **kw)
    return evolve(initial_state(n), model, cfg, periods, transient, seed)


def test_evolve_record_layout_and_determinism():
    a = _short_run(7)
    b = _short_run(7)
    assert a.strobe_period.tolist() == list(range(1, 13))
    assert np.array_equal(a.strobe_t, 2 * np.pi * np.arange(1, 13))
    assert a.post_transient.sum() == 10
    for name in ("strobe_q", "strobe_p", "strobe_energy", "fine_q", "fine_energy", "deficit_max", "leakage_max"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.fine_t.size == 12 * 32 + 1
    # strobes coincide with the fine samples at period boundaries
    assert np.array_equal(a.fine_q[32::32], a.strobe_q)
    assert not np.array_equal(a.strobe_q, _short_run(8).strobe_q)


def test_evolve_physical_initial_centroid():
    rec = _short_run(1, periods=2, transient=1)
    assert rec.fine_q[0] == pytest.approx(1.4 / math.sqrt(2), abs=1e-10)
    assert rec.fine_p[0] == pytest.approx(-0.4 / math.sqrt(2), abs=1e-10)


def test_evolve_rejects_bad_protocol():
    with pytest.raises(ValueError):
        _short_run(1, periods=3, transient=3)


def test_dt_halving_self_convergence():
    n = 128
    model = DuffingModel(ModelParams(Gamma=0.3, g=0.3, beta=0.3), n)
    coarse = evolve(initial_state(n), model, IntegratorConfig(cutoff=n), 10, 0, 1, noise_refine=2)
    fine = evolve(initial_state(n), model, IntegratorConfig(cutoff=n, steps_per_period=8192), 10, 0, 1)
    rms = math.sqrt(np.mean((coarse.strobe_q - fine.strobe_q) ** 2))
    assert rms < 1e-2


def test_leakage_response_to_cutoff():
    model_params = ModelParams(Gamma=0.3, g=0.3, beta=1.0)
    leaks, strobes = [], []
    for n in (20, 28, 40):
        cfg = IntegratorConfig(cutoff=n, leakage_bound=1e-2)
        rec = evolve(initial_state(n), DuffingModel(model_params, n), cfg, 10, 0, 5)
        leaks.append(rec.leakage_max.max())
        strobes.append(rec.strobe_q)
    assert leaks[0] > leaks[1] > leaks[2]
    assert math.sqrt(np.mean((strobes[1] - strobes[2]) ** 2)) < 1e-3


def test_leakage_abort_names_period():
    n = 12
    model = DuffingModel(ModelParams(Gamma=0.3, g=0.3, beta=0.3), n)
    cfg = IntegratorConfig(cutoff=n, moving_frame=False)
    with pytest.raises(TrajectoryAbort) as info:
        evolve(initial_state(n), model, cfg, 5, 1, 0)
    assert info.value.cause == "leakage" and info.value.period >= 1
    assert "cutoff" in str(info.value)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**63 - 1))
def test_physical_centroid_decomposition(seed):
    rec = _short_run(seed, periods=2, transient=1, recenter_threshold=0.3)
    assert np.all(np.isfinite(rec.fine_q)) and np.all(np.isfinite(rec.fine_energy))
    # per-step deficit is |dxi|^2 Var K; Var K grows to O(10) while the packet straddles the barrier
    assert np.all(rec.deficit_max < 0.1)
    assert np.all(rec.leakage_max < 1e-6)
