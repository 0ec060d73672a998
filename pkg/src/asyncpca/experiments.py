"""Monte Carlo orchestration: tradeoff sweeps, phase timing, saddle escape,
and speedup accounting.

Replicas draw from seed-split streams keyed by (seed, cell, replica), so
every cell/replica pair is reproducible in isolation and results do not
depend on scheduling or on which cells run together.  The sweep stacks all
momentum values that share a staleness model into one batched engine call;
a cell's numbers are bitwise identical to running that cell alone.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import IoFailure, SpectralModel, StepTooLarge, TypeMismatch
from .dynamics import (
    DelayModel,
    PhaseWatch,
    RunConfig,
    Trajectory,
    make_streams,
    run_replicas,
)
from .theory import (
    CALIBRATED_ODE_COEFF,
    PhaseParams,
    budget_exponent,
    effective_complexity,
    phase1_time,
    phase2_time,
    phase2_transit_time,
    phase3_time,
)

Z_95 = 1.959963984540054

# Alignment level counting a replica as converged under the
# alignment_threshold success metric.
ALIGNMENT_SUCCESS = 0.99


def wilson_interval(successes: int, n: int, z: float = Z_95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise TypeMismatch("interval needs at least one trial")
    if not 0 <= successes <= n:
        raise TypeMismatch("success count outside [0, n]")
    ph = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (ph + z2 / (2 * n)) / denom
    half = z * math.sqrt(ph * (1.0 - ph) / n + z2 / (4 * n * n)) / denom
    # degenerate counts have exact score-equation roots at the boundary;
    # the float evaluation can land an ulp inside it
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return lo, hi


def _as_delay(tau: Union[int, DelayModel]) -> DelayModel:
    if isinstance(tau, DelayModel):
        return tau
    return DelayModel.fixed(int(tau))


@dataclass
class SweepGrid:
    """A (momentum x staleness) grid sharing one run template.

    base supplies eta, horizon, seed, and the start vector; its mu and delay
    fields are ignored and overridden per cell.  taus may mix plain ints
    (fixed delays) and DelayModel instances.
    """

    mus: List[float]
    taus: List[Union[int, DelayModel]]
    base: RunConfig
    replicas: int = 100
    success_metric: str = "final_error_mean"
    rho: float = 0.1

    def __post_init__(self) -> None:
        if not self.mus or not self.taus:
            raise TypeMismatch("sweep grid must be non-empty")
        if self.replicas < 2:
            raise TypeMismatch("need at least 2 replicas to estimate spread")
        if self.success_metric not in ("final_error_mean", "alignment_threshold"):
            raise TypeMismatch(f"unknown success metric {self.success_metric!r}")
        self.taus = [_as_delay(t) for t in self.taus]

    @property
    def cell_count(self) -> int:
        return len(self.mus) * len(self.taus)


@dataclass
class CellStats:
    """Aggregates for one (mu, delay) cell; per-replica arrays kept for
    bound checking.  Diverged replicas contribute a final error of 1.0."""

    mu: float
    delay: DelayModel
    replicas: int
    errors: np.ndarray
    diverged: int
    success_count: int
    max_jump_sq: np.ndarray
    max_norm_sq: np.ndarray
    clip_count: int

    @property
    def tau(self) -> float:
        return self.delay.value

    @property
    def mean_err(self) -> float:
        return float(self.errors.mean())

    @property
    def std_err(self) -> float:
        return float(self.errors.std(ddof=1))

    @property
    def success_frac(self) -> float:
        return self.success_count / self.replicas


@dataclass
class TradeoffCurve:
    """Sweep output: per-cell stats in grid order (momentum-major) plus the
    estimated largest harmless delay per momentum value."""

    grid: SweepGrid
    cells: List[CellStats]
    tau_hat: Dict[float, Optional[float]]

    def cell(self, mu: float, tau: float) -> CellStats:
        for c in self.cells:
            if c.mu == mu and c.tau == tau:
                return c
        raise TypeMismatch(f"no cell (mu={mu}, tau={tau}) in this sweep")

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        lines = ["mu,tau,replicas,mean_err,std_err,diverged"]
        for c in self.cells:
            lines.append(
                f"{c.mu:g},{c.tau:g},{c.replicas},"
                f"{c.mean_err:.17g},{c.std_err:.17g},{c.diverged}"
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            try:
                Path(path).write_text(text)
            except OSError as exc:
                raise IoFailure(f"cannot write {path}: {exc}") from exc
        return text


def _final_errors(final_h: np.ndarray, diverged: np.ndarray) -> np.ndarray:
    err = 1.0 - final_h[:, 0] ** 2
    err = np.where(np.isfinite(err), err, 1.0)
    err[diverged] = 1.0
    return err


def _run_tau_group(args) -> tuple:
    """One staleness value, all momentum values stacked: the parallel unit."""
    (model, eta, mus, delay, horizon, seed, init_h, replicas, n_tau, j_tau) = args
    n_mu = len(mus)
    mu_vec = np.repeat(np.asarray(mus, dtype=np.float64), replicas)
    streams = [
        make_streams(seed, i_mu * n_tau + j_tau, r)
        for i_mu in range(n_mu)
        for r in range(replicas)
    ]
    res = run_replicas(
        model, eta, mu_vec, delay, horizon, streams, init_h, record=False,
    )
    return (j_tau, res.final_h, res.diverged, res.max_jump_sq,
            res.max_norm_sq, res.clip_count)


def default_workers() -> int:
    """Worker count: ASYNC_LAB_THREADS if set, else the visible CPU count."""
    env = os.environ.get("ASYNC_LAB_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise TypeMismatch(f"ASYNC_LAB_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _group_cells(grid: SweepGrid, j_tau: int, group) -> List[CellStats]:
    final_h, diverged, mjs, mns, clips = group
    R = grid.replicas
    cells = []
    for i_mu, mu in enumerate(grid.mus):
        sl = slice(i_mu * R, (i_mu + 1) * R)
        err = _final_errors(final_h[sl], diverged[sl])
        success = int(np.count_nonzero(~diverged[sl] & (err <= 1.0 - ALIGNMENT_SUCCESS)))
        cells.append(CellStats(
            mu=mu,
            delay=grid.taus[j_tau],
            replicas=R,
            errors=err,
            diverged=int(np.count_nonzero(diverged[sl])),
            success_count=success,
            max_jump_sq=mjs[sl].copy(),
            max_norm_sq=mns[sl].copy(),
            clip_count=int(clips[sl].sum()),
        ))
    return cells


def run_sweep(
    grid: SweepGrid,
    model: SpectralModel,
    *,
    workers: Optional[int] = None,
    progress: Optional[Callable[[str], None]] = None,
    on_group: Optional[Callable[[int, List[CellStats]], None]] = None,
) -> TradeoffCurve:
    """Run every cell of the grid and estimate the largest harmless delay.

    Work is split across processes by staleness value (momentum values
    stacked within each unit); output is identical for any worker count.
    on_group fires as each staleness group finishes, so callers can persist
    partial results; an interrupt then loses only the group in flight.
    """
    base = grid.base
    if model.identity_rotation:
        init_h = np.asarray(base.init, dtype=np.float64)
    else:
        init_h = model.rotation.T @ np.asarray(base.init, dtype=np.float64)
    n_tau = len(grid.taus)
    jobs = [
        (model, base.eta, list(grid.mus), grid.taus[j], base.horizon,
         base.seed, init_h, grid.replicas, n_tau, j)
        for j in range(n_tau)
    ]
    if workers is None:
        workers = default_workers()
    workers = max(1, min(int(workers), n_tau))

    by_group: Dict[int, List[CellStats]] = {}

    def collect(i: int, out) -> None:
        j_tau = out[0]
        by_group[j_tau] = _group_cells(grid, j_tau, out[1:])
        if on_group is not None:
            on_group(j_tau, by_group[j_tau])
        if progress is not None:
            progress(f"staleness group {i + 1}/{n_tau} done")

    if workers == 1:
        for i, job in enumerate(jobs):
            collect(i, _run_tau_group(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, out in enumerate(pool.map(_run_tau_group, jobs)):
                collect(i, out)

    cells = [by_group[j][i_mu] for i_mu in range(len(grid.mus)) for j in range(n_tau)]
    return TradeoffCurve(grid=grid, cells=cells, tau_hat=_optimal_delays(grid, cells))


def _optimal_delays(grid: SweepGrid, cells: List[CellStats]) -> Dict[float, Optional[float]]:
    """Largest delay whose cell is no worse than (1+rho) times the zero-delay
    baseline at the same momentum; None when the grid has no zero-delay cell."""
    out: Dict[float, Optional[float]] = {}
    for mu in grid.mus:
        mine = [c for c in cells if c.mu == mu]
        baseline = next((c for c in mine if c.delay.kind == "fixed" and c.tau == 0), None)
        if baseline is None:
            out[mu] = None
            continue
        if grid.success_metric == "final_error_mean":
            cutoff = (1.0 + grid.rho) * baseline.mean_err
            passing = [c.tau for c in mine if c.mean_err <= cutoff]
        else:
            floor = (1.0 - grid.rho) * baseline.success_frac
            passing = [c.tau for c in mine if c.success_frac >= floor]
        out[mu] = max(passing) if passing else None
    return out


@dataclass
class PhaseTimes:
    """Absolute phase-boundary times of one run; None marks a phase the
    horizon never confirmed."""

    t1: Optional[float]
    t2: Optional[float]
    t3: Optional[float]
    t1_step: Optional[int]
    t2_step: Optional[int]
    t3_step: Optional[int]


def detect_phases(
    trajectory: Trajectory,
    p: PhaseParams,
    *,
    saddle_component: int = 2,
) -> PhaseTimes:
    """Read the three phase boundaries off a recorded trajectory.

    t1: the watched saddle coordinate's alignment first drops below
    1 - delta^2.  t2: leading alignment first reaches 1 - delta^2.  t3:
    start of the first window of one time unit throughout which the
    non-leading residual stays at or below eps.  Resolution is limited by
    the recording stride; the engine watcher gives exact steps.
    """
    eta = trajectory.config.eta
    if eta <= 0.0:
        raise TypeMismatch("phase detection needs a positive step size")
    a = trajectory.alignments
    hi = 1.0 - p.delta_sq
    ks = trajectory.ks

    def first_time(mask: np.ndarray) -> Tuple[Optional[float], Optional[int]]:
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None, None
        k = int(ks[idx[0]])
        return k * eta, k

    t1, t1k = first_time(a[:, saddle_component - 1] < hi)
    t2, t2k = first_time(a[:, 0] >= hi)

    resid = np.einsum("kd,kd->k", trajectory.h, trajectory.h) - a[:, 0]
    window_steps = max(1, int(round(1.0 / eta)))
    w_rows = max(1, int(math.ceil(window_steps / trajectory.stride)))
    ok = resid <= p.eps
    t3 = t3k = None
    if ok.size >= w_rows:
        csum = np.concatenate(([0], np.cumsum(ok)))
        full = csum[w_rows:] - csum[:-w_rows] == w_rows
        start = np.flatnonzero(full)
        if start.size:
            t3k = int(ks[start[0]])
            t3 = t3k * eta
    return PhaseTimes(t1=t1, t2=t2, t3=t3, t1_step=t1k, t2_step=t2k, t3_step=t3k)


@dataclass
class PhaseReport:
    """Per-replica phase boundary times with the closed-form predictions and
    Wilson-bounded success frequencies.  Times are absolute from the start;
    NaN marks a phase the horizon never confirmed."""

    params: PhaseParams
    delay: DelayModel
    horizon: int
    seed: int
    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    predictions: Dict[str, float]
    resid_at_bundle: Dict[str, np.ndarray]
    probabilities: Dict[str, Tuple[float, float, float]]

    @property
    def replicas(self) -> int:
        return self.t1.size

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        pred = self.predictions
        lines = ["replica,t1,t2,t3,T1_main,T1_alt,T2,T3_main,T3_alt"]
        for r in range(self.replicas):
            lines.append(
                f"{r},{self.t1[r]:.17g},{self.t2[r]:.17g},{self.t3[r]:.17g},"
                f"{pred['T1_main']:.17g},{pred['T1_alt']:.17g},{pred['T2']:.17g},"
                f"{pred['T3_main']:.17g},{pred['T3_alt']:.17g}"
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            try:
                Path(path).write_text(text)
            except OSError as exc:
                raise IoFailure(f"cannot write {path}: {exc}") from exc
        return text

    def summary(self) -> str:
        pred = self.predictions
        lines = [
            f"replicas={self.replicas} delay={self.delay.describe()} horizon={self.horizon}",
            f"T1 main={pred['T1_main']:.4f} alt={pred['T1_alt']:.4f}",
            f"T2 statement={pred['T2']:.4f} traverse={pred['T2_transit']:.4f}",
            f"T3 main={pred['T3_main']:.4f} alt={pred['T3_alt']:.4f}",
        ]
        for name, (val, lo, hi) in sorted(self.probabilities.items()):
            lines.append(f"P[{name}] = {val:.3f} (95% Wilson {lo:.3f}..{hi:.3f})")
        return "\n".join(lines)


def _bundle_step(p: PhaseParams, variant: str, horizon: int) -> int:
    total = phase1_time(p, variant=variant) + phase2_transit_time(p) \
        + phase3_time(p, variant=variant)
    step = int(round(total / p.eta))
    if step > horizon:
        warnings.warn(
            f"{variant} bundle lands at step {step}, beyond the horizon "
            f"{horizon}; the settle probe runs at the final step instead",
            stacklevel=3,
        )
    return max(1, min(horizon, step))


def run_phase_experiment(
    model: SpectralModel,
    p: PhaseParams,
    delay: DelayModel,
    horizon: int,
    *,
    replicas: int = 100,
    seed: int = 0,
    saddle_component: int = 2,
) -> PhaseReport:
    """Run replicas from the exact saddle start and score the phase-time
    predictions.

    The bundle times (escape + traverse + settle, per constant-variant) are
    evaluated inside the engine at exact steps.  The traverse term uses the
    full crossing time; the statement formula covers only half of it and
    would land the probe mid-traverse.
    """
    if horizon < 1:
        raise TypeMismatch("phase experiment needs at least one step")
    d = model.dim
    init_h = np.zeros(d)
    init_h[saddle_component - 1] = 1.0
    step_main = _bundle_step(p, "main", horizon)
    step_alt = _bundle_step(p, "alt", horizon)
    targets = tuple(dict.fromkeys((step_main, step_alt)))
    watch = PhaseWatch(
        delta_sq=p.delta_sq,
        eps=p.eps,
        window=max(1, int(round(1.0 / p.eta))),
        saddle_component=saddle_component,
        target_steps=targets,
    )
    streams = [make_streams(seed, 0, r) for r in range(replicas)]
    res = run_replicas(
        model, p.eta, p.mu, delay, horizon, streams, init_h,
        record=False, watch=watch,
    )

    def times(steps: np.ndarray) -> np.ndarray:
        out = np.where(steps >= 0, steps * p.eta, np.nan)
        return out.astype(np.float64)

    t1, t2, t3 = times(res.t1_step), times(res.t2_step), times(res.t3_step)
    predictions = {
        "T1_main": phase1_time(p, variant="main"),
        "T1_alt": phase1_time(p, variant="alt"),
        "T2": phase2_time(p),
        "T2_transit": phase2_transit_time(p),
        "T3_main": phase3_time(p, variant="main"),
        "T3_alt": phase3_time(p, variant="alt"),
    }
    resid_at = {
        "main": res.resid_at_targets[targets.index(step_main)].copy(),
        "alt": res.resid_at_targets[targets.index(step_alt)].copy(),
    }
    probabilities: Dict[str, Tuple[float, float, float]] = {}
    for variant in ("main", "alt"):
        t_pred = predictions["T1_main" if variant == "main" else "T1_alt"]
        hits = int(np.count_nonzero(~np.isnan(t1) & (t1 <= t_pred)))
        lo, hi = wilson_interval(hits, replicas)
        probabilities[f"escape_by_T1_{variant}"] = (hits / replicas, lo, hi)
        resid = resid_at[variant]
        hits = int(np.count_nonzero(np.isfinite(resid) & (resid <= p.eps)))
        lo, hi = wilson_interval(hits, replicas)
        probabilities[f"settled_at_bundle_{variant}"] = (hits / replicas, lo, hi)
    return PhaseReport(
        params=p,
        delay=delay,
        horizon=horizon,
        seed=seed,
        t1=t1,
        t2=t2,
        t3=t3,
        predictions=predictions,
        resid_at_bundle=resid_at,
        probabilities=probabilities,
    )


@dataclass
class EscapeEstimate:
    probability: float
    lower: float
    upper: float
    exceed_count: int
    replicas: int
    level: float


def escape_probability(
    model: SpectralModel,
    config: RunConfig,
    level: float,
    horizon: Optional[int] = None,
    *,
    replicas: int = 100,
    component: int = 1,
) -> EscapeEstimate:
    """Fraction of replicas whose chosen coordinate moves more than
    level * sqrt(eta) away from its start within the horizon (strictly
    more, so level 0 counts any movement), with a Wilson 95% interval.
    """
    if level < 0:
        raise TypeMismatch("level must be non-negative")
    if horizon is None:
        horizon = config.horizon
    if model.identity_rotation:
        init_h = np.asarray(config.init, dtype=np.float64)
    else:
        init_h = model.rotation.T @ np.asarray(config.init, dtype=np.float64)
    watch = PhaseWatch(
        delta_sq=0.0, eps=0.0, window=1, escape_component=component,
    )
    streams = [make_streams(config.seed, 0, r) for r in range(replicas)]
    res = run_replicas(
        model, config.eta, config.mu, config.delay, horizon, streams, init_h,
        record=False, watch=watch,
    )
    threshold = level * math.sqrt(config.eta)
    exceed = int(np.count_nonzero(res.escape_max_dev > threshold))
    lo, hi = wilson_interval(exceed, replicas)
    return EscapeEstimate(
        probability=exceed / replicas,
        lower=lo,
        upper=hi,
        exceed_count=exceed,
        replicas=replicas,
        level=level,
    )


@dataclass
class SpeedupPoint:
    """Empirical per-worker step counts at one staleness value, against the
    closed-form targets.  NaN marks phases the horizon never confirmed, or
    (for n3_pred) a settle form undefined at this step size."""

    tau: int
    entry_emp: float
    n1_emp: float
    n2_emp: float
    n3_emp: float
    n1_pred: float
    n2_pred: float
    n3_pred: float
    reached: Tuple[int, int, int]
    budget_gamma: Optional[float]


def speedup_curve(
    p: PhaseParams,
    taus: Sequence[int],
    horizon: int,
    *,
    replicas: int = 100,
    seed: int = 0,
    saddle_component: int = 2,
    variant: str = "main",
) -> List[SpeedupPoint]:
    """Effective per-worker step counts across staleness values.

    entry_emp is the mean steps to reach the 1 - delta^2 alignment level
    divided by tau: the most robust speedup readout, since it needs no
    phase-boundary subtraction.  Delays outside the admissibility budget
    are run anyway and flagged via budget_gamma=None.
    """
    d = p.model.dim
    init_h = np.zeros(d)
    init_h[saddle_component - 1] = 1.0
    watch = PhaseWatch(
        delta_sq=p.delta_sq,
        eps=p.eps,
        window=max(1, int(round(1.0 / p.eta))),
        saddle_component=saddle_component,
    )
    def nanmean(x: np.ndarray) -> float:
        return float(np.nanmean(x)) if np.any(np.isfinite(x)) else math.nan

    points: List[SpeedupPoint] = []
    for j, tau in enumerate(taus):
        tau = int(tau)
        if tau < 1:
            raise TypeMismatch("speedup is per worker; tau must be >= 1")
        streams = [make_streams(seed, j, r) for r in range(replicas)]
        res = run_replicas(
            p.model, p.eta, p.mu, DelayModel.fixed(tau), horizon, streams,
            init_h, record=False, watch=watch,
        )
        t1 = np.where(res.t1_step >= 0, res.t1_step, np.nan).astype(float)
        t2 = np.where(res.t2_step >= 0, res.t2_step, np.nan).astype(float)
        t3 = np.where(res.t3_step >= 0, res.t3_step, np.nan).astype(float)
        try:
            n3_pred = effective_complexity(3, p, tau, variant=variant)
        except StepTooLarge:
            n3_pred = math.nan
        points.append(SpeedupPoint(
            tau=tau,
            entry_emp=nanmean(t2) / tau,
            n1_emp=nanmean(t1) / tau,
            n2_emp=nanmean(t2 - t1) / tau,
            n3_emp=nanmean(t3 - t2) / tau,
            n1_pred=effective_complexity(1, p, tau, variant=variant),
            n2_pred=effective_complexity(2, p, tau),
            n3_pred=n3_pred,
            reached=(
                int(np.count_nonzero(np.isfinite(t1))),
                int(np.count_nonzero(np.isfinite(t2))),
                int(np.count_nonzero(np.isfinite(t3))),
            ),
            budget_gamma=budget_exponent(
                tau, p.mu, p.eta, p.model, regime="ode",
                c_tau=CALIBRATED_ODE_COEFF,
            ),
        ))
    return points
