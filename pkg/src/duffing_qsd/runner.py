"""Orchestration: jobs per (beta, trajectory), CSV outputs and the NDJSON manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .classical import ClassicalState, integrate, lyapunov_spectrum
from .config import RunConfig, build_config
from .diagnostics import (
    BetaSummary,
    detect_crossings,
    interwell_events,
    low_freq_rise,
    record_spectrum,
    strobe_section,
    transition_report,
    tunneling_events,
)
from .fock import TruncationError, coherent_state
from .lindblad import DensityMatrix, ensemble_reduce, evolve_density
from .model import DuffingModel, ModelParams
from .qsd import IntegratorConfig, TrajectoryAbort, default_cutoff, evolve

log = logging.getLogger(__name__)

STROBE_COLUMNS = "period,t,q_exp,p_exp,q_scaled,p_scaled,energy,norm_deficit_max,leakage_max"
FINE_COLUMNS = "t,q_exp,p_exp,energy"
SPECTRUM_COLUMNS = "omega,S_raw,S_smooth"
EVENTS_COLUMNS = "t,direction,energy,below_barrier"
SECTION_COLUMNS = "period,q_exp,p_exp,q_scaled,p_scaled"
REPORT_COLUMNS = "beta,R,interwell_count,tunneling_count,section_rms,verdict"


def job_seed(base: int, beta_index: int, traj_index: int) -> int:
    """Stable 64-bit seed from (base, beta index, trajectory index)."""
    digest = hashlib.blake2b(struct.pack("<QQQ", base, beta_index, traj_index), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: str, rows) -> str:
    """Write rows and return the sha256 of the bytes written."""
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    data = ("\n".join(lines) + "\n").encode()
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def integrator_config(cfg: RunConfig, beta: float, cutoff: int | None = None) -> IntegratorConfig:
    n = cutoff or cfg["integrator.cutoff"] or default_cutoff(beta)
    return IntegratorConfig(
        steps_per_period=cfg["integrator.steps_per_period"],
        scheme=cfg["integrator.scheme"],
        recenter_threshold=cfg["integrator.recenter_threshold"],
        moving_frame=cfg["integrator.moving_frame"],
        cutoff=n,
        leakage_bound=cfg["integrator.leakage_bound"],
        fine_per_period=cfg["protocol.fine_sample_per_period"],
    )


def model_params(cfg: RunConfig, beta: float) -> ModelParams:
    return ModelParams(Gamma=cfg["model.Gamma"], g=cfg["model.g"], Omega=cfg["model.Omega"], beta=beta)


@dataclass
class JobResult:
    beta_index: int
    traj_index: int
    beta: float
    seed: int
    status: str
    cause: str = ""
    period: int = -1
    message: str = ""
    files: dict | None = None
    summary: BetaSummary | None = None
    elapsed: float = 0.0


def _run_job(args) -> JobResult:
    values, beta_index, traj_index, out_dir = args
    cfg = build_config(values)
    beta = cfg.betas[beta_index]
    seed = job_seed(cfg["seeds.base"], beta_index, traj_index)
    icfg = integrator_config(cfg, beta)
    model = DuffingModel(model_params(cfg, beta), icfg.cutoff)
    t0 = time.perf_counter()
    try:
        init, _ = coherent_state(cfg.alpha, icfg.cutoff)
        rec = evolve(init, model, icfg, cfg["protocol.periods_total"], cfg["protocol.transient_periods"], seed)
    except TrajectoryAbort as exc:
        return JobResult(beta_index, traj_index, beta, seed, "aborted", exc.cause, exc.period, str(exc),
                         elapsed=time.perf_counter() - t0)
    except TruncationError as exc:
        return JobResult(beta_index, traj_index, beta, seed, "aborted", "truncation", 0, str(exc),
                         elapsed=time.perf_counter() - t0)
    job_dir = Path(out_dir) / f"beta_{beta_index:02d}" / f"traj_{traj_index:03d}"
    job_dir.mkdir(parents=True, exist_ok=True)
    files, summary = write_record_outputs(rec, cfg, job_dir)
    return JobResult(beta_index, traj_index, beta, seed, "ok", files=files, summary=summary,
                     elapsed=time.perf_counter() - t0)


def analyse_record(rec, cfg: RunConfig):
    """Section, spectrum, events and the per-trajectory summary row."""
    section = strobe_section(rec, cfg["protocol.transient_periods"])
    spectrum = None
    R = math.nan
    try:
        spectrum = record_spectrum(rec, cfg["protocol.transient_periods"], cfg["diagnostics.knot_count"])
        R = low_freq_rise(spectrum, rec.Omega, cfg["diagnostics.low_band"], cfg["diagnostics.high_band"])
    except ValueError as exc:
        log.warning("no chaos metric for beta=%g: %s", rec.beta, exc)
    events = interwell_events(rec, cfg["diagnostics.threshold_fraction"], cfg["protocol.transient_periods"])
    summary = BetaSummary(rec.beta, R, len(events), len(tunneling_events(events)), section.rms_dispersion())
    return section, spectrum, events, summary


def write_record_outputs(rec, cfg: RunConfig, job_dir: Path):
    section, spectrum, events, summary = analyse_record(rec, cfg)
    b = rec.beta
    files = {}
    files["strobe.csv"] = write_csv(
        job_dir / "strobe.csv",
        STROBE_COLUMNS,
        zip(rec.strobe_period, rec.strobe_t, rec.strobe_q, rec.strobe_p, b * rec.strobe_q, b * rec.strobe_p,
            rec.strobe_energy, rec.deficit_max, rec.leakage_max),
    )
    files["fine.csv"] = write_csv(
        job_dir / "fine.csv", FINE_COLUMNS, zip(rec.fine_t, rec.fine_q, rec.fine_p, rec.fine_energy)
    )
    spec_rows = [] if spectrum is None else zip(spectrum.omega, spectrum.S, spectrum.S_smooth)
    files["spectrum.csv"] = write_csv(job_dir / "spectrum.csv", SPECTRUM_COLUMNS, spec_rows)
    files["events.csv"] = write_csv(
        job_dir / "events.csv", EVENTS_COLUMNS, ((e.t, e.direction, e.energy, e.below_barrier) for e in events)
    )
    files["section.csv"] = write_csv(
        job_dir / "section.csv",
        SECTION_COLUMNS,
        zip(section.periods, section.points[:, 0], section.points[:, 1],
            section.scaled_points[:, 0], section.scaled_points[:, 1]),
    )
    files = {str((job_dir / k).as_posix()): v for k, v in files.items()}
    return files, summary


def _map_jobs(fn, tasks, jobs: int):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _relpaths(files: dict, root: Path) -> dict:
    return {Path(k).relative_to(root).as_posix(): v for k, v in files.items()}


def run(cfg: RunConfig, out_dir: str | Path | None = None, jobs: int = 1, require_sweep: bool = False) -> dict:
    """Execute every (beta, trajectory) job, then the sweep report and manifest.

    Returns the summary manifest object; ``summary["ok"]`` is False if any job aborted.
    """
    out = Path(out_dir or cfg["outputs.directory"])
    out.mkdir(parents=True, exist_ok=True)
    betas = cfg.betas
    if require_sweep and len(betas) < 2:
        raise ValueError("a sweep needs at least two beta values")
    start = time.time()
    tasks = [
        (cfg.to_flat(), bi, ti, str(out))
        for bi in range(len(betas))
        for ti in range(cfg["seeds.trajectories"])
    ]
    results = _map_jobs(_run_job, tasks, jobs)

    job_lines = []
    for r in results:
        job_lines.append({
            "type": "job",
            "beta_index": r.beta_index,
            "traj_index": r.traj_index,
            "beta": r.beta,
            "seed": r.seed,
            "status": r.status,
            "cause": r.cause,
            "abort_period": r.period,
            "message": r.message,
            "files": _relpaths(r.files, out) if r.files else {},
            "elapsed_s": round(r.elapsed, 3),
        })

    checksums = {}
    for r in results:
        if r.files:
            checksums.update(_relpaths(r.files, out))

    report = None
    if len(betas) >= 2:
        rows = []
        for bi, beta in enumerate(betas):
            sums = [r.summary for r in results if r.beta_index == bi and r.summary is not None]
            if not sums:
                continue
            rows.append(BetaSummary(
                beta,
                float(np.mean([s.R for s in sums])),
                int(sum(s.interwell_count for s in sums)),
                int(sum(s.tunneling_count for s in sums)),
                float(np.mean([s.section_rms for s in sums])),
            ))
        if len(rows) >= 2:
            report = transition_report(rows, cfg["diagnostics.order_threshold"])
            checksums["transition_report.csv"] = write_csv(
                out / "transition_report.csv",
                REPORT_COLUMNS,
                ((r.beta, r.R, r.interwell_count, r.tunneling_count, r.section_rms, report.verdict) for r in report.rows),
            )

    ok = all(r.status == "ok" for r in results)
    summary = {
        "type": "summary",
        "command": "run",
        "config": cfg.to_flat(),
        "seeds": {f"{r.beta_index}:{r.traj_index}": r.seed for r in results},
        "code_version": __version__,
        "wall_clock_s": round(time.time() - start, 3),
        "checksums": checksums,
        "verdict": report.verdict if report else None,
        "ok": ok,
    }
    write_manifest(out / "manifest.ndjson", job_lines, summary)
    return summary


def write_manifest(path: Path, job_lines, summary) -> None:
    with open(path, "w") as fh:
        for obj in job_lines:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
        fh.write(json.dumps(summary, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> tuple[list[dict], dict]:
    jobs, summary = [], None
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            if obj.get("type") == "summary":
                summary = obj
            else:
                jobs.append(obj)
    if summary is None:
        raise ValueError(f"{path} has no summary line")
    return jobs, summary


def config_from_manifest(path: str | Path) -> RunConfig:
    return build_config(read_manifest(path)[1]["config"])


def verify_checksums(out_dir: str | Path, checksums: dict) -> dict[str, bool]:
    out = Path(out_dir)
    return {
        name: (out / name).exists() and hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        for name, digest in checksums.items()
    }


def run_classical(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Classical section, interwell crossings and Lyapunov exponents."""
    out = Path(out_dir or cfg["outputs.directory"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    params = model_params(cfg, 1.0)
    s0 = ClassicalState(cfg["classical.q0"], cfg["classical.p0"])
    transient = cfg["classical.transient_periods"]
    periods = cfg["classical.periods"]
    traj = integrate(s0, params, T=(transient + periods) * params.period)
    stride = int(round(params.period / (traj.t[1] - traj.t[0])))
    strobe = slice(stride * (transient + 1), None, stride)
    post = slice(stride * transient, None)
    events = detect_crossings(traj.t[post], traj.q[post], traj.energy()[post], cfg["diagnostics.threshold_fraction"])
    lyap = lyapunov_spectrum(
        params, s0, T_total=periods * params.period,
        renorm_interval=cfg["classical.renorm_steps"], transient_periods=transient,
    )
    files = {}
    n_strobe = traj.t[strobe].size
    files["classical_section.csv"] = write_csv(
        out / "classical_section.csv",
        "period,q,p",
        zip(np.arange(transient + 1, transient + 1 + n_strobe), traj.q[strobe], traj.p[strobe]),
    )
    files["classical_events.csv"] = write_csv(
        out / "classical_events.csv", EVENTS_COLUMNS, ((e.t, e.direction, e.energy, e.below_barrier) for e in events)
    )
    l1, l2 = lyap.exponents
    files["classical_lyapunov.csv"] = write_csv(
        out / "classical_lyapunov.csv",
        "Gamma,g,Omega,lambda_max,lambda_2,lambda_sum,interwell_count,below_barrier_count",
        [(params.Gamma, params.g, params.Omega, l1, l2, l1 + l2, len(events), len(tunneling_events(events)))],
    )
    summary = {
        "type": "summary",
        "command": "classical",
        "config": cfg.to_flat(),
        "code_version": __version__,
        "wall_clock_s": round(time.time() - start, 3),
        "checksums": files,
        "lambda_max": l1,
        "interwell_count": len(events),
        "ok": True,
    }
    write_manifest(out / "manifest.ndjson", [], summary)
    return summary


def oracle_check(cfg: RunConfig, out_dir: str | Path | None = None, jobs: int = 1) -> dict:
    """Compare a QSD ensemble with the dense master equation at evenly spaced checkpoints."""
    out = Path(out_dir or cfg["outputs.directory"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    beta = cfg.betas[0]
    n = cfg["oracle.cutoff"]
    m = cfg["oracle.trajectories"]
    periods = cfg["oracle.periods"]
    params = model_params(cfg, beta)
    icfg = _oracle_integrator(cfg, beta, n)
    model = DuffingModel(params, n)
    init, _ = coherent_state(cfg.alpha, n)
    n_cp = cfg["oracle.checkpoints"]
    checkpoints = [params.period * periods * (k + 1) / n_cp for k in range(n_cp)]
    seeds = [job_seed(cfg["seeds.base"], 0, j) for j in range(m)]
    records = _map_jobs(_oracle_job, [(cfg.to_flat(), beta, n, s) for s in seeds], jobs)
    ens = ensemble_reduce(records, checkpoints)
    dt = params.period / (2 * icfg.steps_per_period)
    ref = evolve_density(DensityMatrix.pure(init), model, dt, params.period * periods, checkpoints)
    ok_masks = ens.within(ref, 3.0)
    rows = []
    for name, mean, se, oracle in (
        ("q", ens.mean_q, ens.se_q, ref.q),
        ("p", ens.mean_p, ens.se_p, ref.p),
        ("energy", ens.mean_energy, ens.se_energy, ref.energy),
    ):
        for k, t in enumerate(checkpoints):
            rows.append((t, name, mean[k], se[k], oracle[k], bool(ok_masks[name][k])))
    passed = all(bool(mk.all()) for mk in ok_masks.values())
    lines = ["t,observable,qsd_mean,qsd_stderr,oracle,within_3se"]
    lines += [f"{_fmt(t)},{name},{_fmt(a)},{_fmt(b)},{_fmt(c)},{_fmt(d)}" for t, name, a, b, c, d in rows]
    data = ("\n".join(lines) + "\n").encode()
    (out / "oracle_check.csv").write_bytes(data)
    verdict = f"{'PASS' if passed else 'FAIL'} beta={beta} cutoff={n} trajectories={m} periods={periods}\n"
    (out / "oracle_check.txt").write_text(verdict)
    summary = {
        "type": "summary",
        "command": "oracle-check",
        "config": cfg.to_flat(),
        "code_version": __version__,
        "wall_clock_s": round(time.time() - start, 3),
        "checksums": {
            "oracle_check.csv": hashlib.sha256(data).hexdigest(),
            "oracle_check.txt": hashlib.sha256(verdict.encode()).hexdigest(),
        },
        "passed": passed,
        "ok": passed,
    }
    write_manifest(out / "manifest.ndjson", [], summary)
    return summary


def _oracle_integrator(cfg: RunConfig, beta: float, n: int) -> IntegratorConfig:
    icfg = integrator_config(cfg, beta, cutoff=n)
    # Both sides use the same truncated operators in a fixed frame, so
    # top-level population is part of the compared model, not an error.
    icfg.moving_frame = False
    icfg.leakage_bound = 1.0
    return icfg


def _oracle_job(args):
    values, beta, n, seed = args
    cfg = build_config(values)
    params = model_params(cfg, beta)
    icfg = _oracle_integrator(cfg, beta, n)
    model = DuffingModel(params, n)
    init, _ = coherent_state(cfg.alpha, n)
    periods = cfg["oracle.periods"]
    return evolve(init, model, icfg, periods, 0, seed)
