"""Poincare sections, smoothed power spectra, interwell events and the chaos verdict."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import LSQUnivariateSpline, make_interp_spline

from .qsd import TrajectoryRecord

MIN_SECTION_POINTS = 50
MIN_SPECTRUM_PERIODS = 200
DEFAULT_KNOTS = 24
LOW_BAND = (0.0, 0.1)
HIGH_BAND = (0.2, 0.5)
ORDER_THRESHOLD = 1.0

MONOTONE_DECREASING = "MONOTONE_DECREASING"
NON_MONOTONE = "NON_MONOTONE"
INCONCLUSIVE = "INCONCLUSIVE"


class ShortSectionWarning(UserWarning):
    pass


@dataclass
class PoincareSection:
    points: np.ndarray  # (count, 2) physical <Q>, <P>
    scaled_points: np.ndarray  # beta * points
    periods: np.ndarray
    beta: float
    strobe_period: float

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def rms_dispersion(self, scaled: bool = True) -> float:
        pts = self.scaled_points if scaled else self.points
        if pts.shape[0] == 0:
            return 0.0
        d = pts - pts.mean(axis=0)
        return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))


def strobe_section(record: TrajectoryRecord, transient_skip: int | None = None) -> PoincareSection:
    skip = record.transient_periods if transient_skip is None else transient_skip
    keep = record.strobe_period > skip
    pts = np.column_stack([record.strobe_q[keep], record.strobe_p[keep]])
    if pts.shape[0] < MIN_SECTION_POINTS:
        warnings.warn(
            f"only {pts.shape[0]} post-transient section points (< {MIN_SECTION_POINTS})",
            ShortSectionWarning,
            stacklevel=2,
        )
    return PoincareSection(pts, record.beta * pts, record.strobe_period[keep], record.beta, 2 * math.pi / record.Omega)


@dataclass
class PowerSpectrum:
    omega: np.ndarray
    S: np.ndarray
    sample_interval: float
    n_samples: int
    window: str = "hann"
    S_smooth: np.ndarray | None = field(default=None)
    windowed_variance: float = 0.0

    @property
    def duration(self) -> float:
        return self.n_samples * self.sample_interval


def periodogram(series: Sequence[float], sample_interval: float, times: Sequence[float] | None = None) -> PowerSpectrum:
    """One-sided Hann-windowed periodogram on angular frequencies ``(0, pi/dt]``.

    Normalized so that ``sum(S) * d_omega`` equals the variance of the
    windowed, mean-removed series.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 128:
        raise ValueError("periodogram needs at least 128 samples")
    if times is not None:
        steps = np.diff(np.asarray(times, dtype=float))
        if np.max(np.abs(steps - sample_interval)) > 1e-9 * sample_interval:
            raise ValueError("series is not uniformly sampled")
    y = (x - x.mean()) * np.hanning(n)
    spec = np.fft.rfft(y)
    d_omega = 2 * math.pi / (n * sample_interval)
    weight = np.full(spec.size, 2.0)
    if n % 2 == 0:
        weight[-1] = 1.0
    S = weight * np.abs(spec) ** 2 / (n**2 * d_omega)
    omega = np.arange(spec.size) * d_omega
    return PowerSpectrum(omega[1:], S[1:], sample_interval, n, "hann", None, float(np.var(y)))


def _log_knots(u: np.ndarray, knot_count: int) -> np.ndarray:
    """Interior knots, evenly spaced in ``u`` and thinned until every span holds data."""
    cand = np.linspace(u[0], u[-1], knot_count)[1:-1]
    knots = []
    lo = u[0]
    for k in cand:
        # need a few samples in (lo, k] and the tail beyond k
        if np.count_nonzero((u > lo) & (u <= k)) >= 3 and np.count_nonzero(u > k) >= 3:
            knots.append(k)
            lo = k
    return np.array(knots)


def spline_smooth(spectrum: PowerSpectrum, knot_count: int = DEFAULT_KNOTS) -> PowerSpectrum:
    """Least-squares cubic spline of ``log S`` against ``log omega``."""
    if knot_count < 4:
        raise ValueError("knot_count must be >= 4")
    w, S = spectrum.omega, spectrum.S
    if w.size < 4 or np.any(np.diff(w) <= 0):
        raise ValueError("degenerate frequency grid")
    u = np.log(w)
    v = np.log(np.maximum(S, np.finfo(float).tiny))
    if knot_count >= w.size:
        fit = make_interp_spline(u, v, k=3)
    else:
        fit = LSQUnivariateSpline(u, v, _log_knots(u, knot_count), k=3)
    return replace(spectrum, S_smooth=np.exp(fit(u)))


def low_freq_rise(
    spectrum: PowerSpectrum,
    Omega: float = 1.0,
    low_band: Sequence[float] = LOW_BAND,
    high_band: Sequence[float] = HIGH_BAND,
) -> float:
    """Mean log smoothed power in ``(0, 0.1 Omega]`` minus that in ``[0.2, 0.5] Omega``.

    Band edges are in units of ``Omega``; the low band excludes its lower edge.
    """
    if spectrum.duration < MIN_SPECTRUM_PERIODS * 2 * math.pi / Omega:
        raise ValueError("series too short for low-frequency resolution (< 200 drive periods)")
    if spectrum.omega[-1] < high_band[1] * Omega * (1 - 1e-9):
        raise ValueError(f"spectrum does not reach {high_band[1]} Omega")
    s = spectrum.S_smooth if spectrum.S_smooth is not None else spline_smooth(spectrum).S_smooth
    w = spectrum.omega
    tiny = 1e-12 * Omega
    low = (w > low_band[0] * Omega) & (w <= low_band[1] * Omega + tiny)
    high = (w >= high_band[0] * Omega - tiny) & (w <= high_band[1] * Omega + tiny)
    if not low.any() or not high.any():
        raise ValueError("a spectral band contains no frequency bins")
    return float(np.mean(np.log(s[low])) - np.mean(np.log(s[high])))


def record_spectrum(record: TrajectoryRecord, transient_skip: int | None = None, knot_count: int = DEFAULT_KNOTS) -> PowerSpectrum:
    """Smoothed spectrum of the post-transient fine-grained ``<Q>(t)``.

    Strobed samples alias the drive to zero frequency, which hides the
    difference between a regular orbit and a chaotic one, so the
    continuous series is used.
    """
    skip = record.transient_periods if transient_skip is None else transient_skip
    t0 = skip * 2 * math.pi / record.Omega
    keep = record.fine_t >= t0 - 1e-9
    t = record.fine_t[keep]
    return spline_smooth(periodogram(record.fine_q[keep], t[1] - t[0], t), knot_count)


@dataclass(frozen=True)
class Event:
    t: float
    direction: int
    energy: float
    below_barrier: bool


def detect_crossings(t, s, energy, h: float = 0.5) -> list[Event]:
    """Hysteresis detector: an event fires when ``s`` passes from beyond ``+h`` to
    below ``-h`` (direction -1) or the reverse (+1). Time and energy are
    interpolated at the last zero crossing before the trigger."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    energy = np.asarray(energy, dtype=float)
    events: list[Event] = []
    side = 0
    for j in range(s.size):
        if s[j] > h:
            new = 1
        elif s[j] < -h:
            new = -1
        else:
            continue
        if side != 0 and new != side:
            i = j
            while i > 0 and not (np.sign(s[i - 1]) * new <= 0 < s[i] * new):
                i -= 1
            if i == 0:
                i = j
            s0, s1 = s[i - 1], s[i]
            frac = s0 / (s0 - s1) if s0 != s1 else 0.0
            tc = t[i - 1] + frac * (t[i] - t[i - 1])
            ec = energy[i - 1] + frac * (energy[i] - energy[i - 1])
            if events and tc <= events[-1].t:
                tc = np.nextafter(events[-1].t, np.inf)
            events.append(Event(float(tc), new, float(ec), bool(ec < 0.0)))
        side = new
    return events


def interwell_events(record: TrajectoryRecord, threshold_fraction: float = 0.5, transient_skip: int | None = None) -> list[Event]:
    """Crossings of the scaled centroid ``beta <Q>`` between the wells."""
    skip = record.transient_periods if transient_skip is None else transient_skip
    t0 = skip * 2 * math.pi / record.Omega
    keep = record.fine_t >= t0 - 1e-9
    return detect_crossings(
        record.fine_t[keep], record.beta * record.fine_q[keep], record.fine_energy[keep], threshold_fraction
    )


def tunneling_events(events: Iterable[Event]) -> list[Event]:
    return [e for e in events if e.below_barrier]


@dataclass
class BetaSummary:
    beta: float
    R: float
    interwell_count: int
    tunneling_count: int
    section_rms: float


@dataclass
class TransitionReport:
    rows: list[BetaSummary]
    verdict: str


def classify(R: Sequence[float], threshold: float = ORDER_THRESHOLD) -> str:
    R = list(R)
    if len(R) < 2:
        raise ValueError("need at least two beta values")
    for i in range(1, len(R) - 1):
        if R[i] - max(R[:i]) > threshold and R[i] - max(R[i + 1 :]) > threshold:
            return NON_MONOTONE
    no_rise = all(R[j] <= R[i] + threshold for i in range(len(R)) for j in range(i + 1, len(R)))
    if no_rise and R[0] - R[-1] > threshold:
        return MONOTONE_DECREASING
    return INCONCLUSIVE


def transition_report(per_beta: Iterable[BetaSummary], threshold: float = ORDER_THRESHOLD) -> TransitionReport:
    rows = sorted(per_beta, key=lambda r: r.beta)
    return TransitionReport(rows, classify([r.R for r in rows], threshold))
