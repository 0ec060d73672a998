"""The stale-read momentum iteration: single steps, delay models, trajectories.

The update implemented everywhere is

    v_{k+1} = v_k + mu (v_k - v_{k-1}) + eta (I - v_r v_r^T) X_k X_k^T v_r

with v_r = v_{k - tau_k} the stale read.  Staleness applies only to the
gradient; the momentum difference always uses the two freshest iterates.
Reads older than the start clip to the initial vector (v_{-i} = v_0).

All simulation runs in the rotated eigenbasis, where the sample covariance
is diagonal; a trajectory therefore records h_k = Q^T v_k directly.  The
batched engine and the single-step reference share operation order exactly,
so one replica of a batch is bitwise identical to stepping by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    DelayExceedsCap,
    IoFailure,
    SpectralModel,
    TypeMismatch,
    draw_coordinates,
    seed_stream,
)

_BLOCK = 2048


@dataclass
class DelayModel:
    """Staleness process: fixed, bounded-uniform, geometric, or poisson.

    value is the fixed delay, the uniform upper bound, or the mean of the
    unbounded kinds.  Unbounded kinds are clipped at cap (default 4x mean)
    and the engine counts how often the clip fires.
    """

    kind: str
    value: float
    cap: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform", "geometric", "poisson"):
            raise TypeMismatch(f"unknown delay kind {self.kind!r}")
        if self.value < 0:
            raise TypeMismatch("delay value must be non-negative")
        if self.kind in ("fixed", "uniform"):
            self.value = int(self.value)
            if self.cap is None:
                self.cap = int(self.value)
            elif self.cap < self.value:
                raise TypeMismatch("cap below the deterministic delay bound")
        elif self.cap is None:
            self.cap = max(1, int(math.ceil(4.0 * self.value)))

    @classmethod
    def fixed(cls, tau: int) -> "DelayModel":
        return cls("fixed", tau)

    @classmethod
    def uniform_bounded(cls, tau_max: int) -> "DelayModel":
        return cls("uniform", tau_max)

    @classmethod
    def geometric(cls, mean: float, cap: Optional[int] = None) -> "DelayModel":
        return cls("geometric", mean, cap)

    @classmethod
    def poisson(cls, mean: float, cap: Optional[int] = None) -> "DelayModel":
        return cls("poisson", mean, cap)

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed({int(self.value)})"
        return f"{self.kind}({self.value}, cap={self.cap})"

    def draw_raw(self, rng: np.random.Generator, n: Optional[int] = None):
        """Unclipped draw(s); block and scalar draws consume the stream alike."""
        if self.kind == "fixed":
            v = int(self.value)
            return v if n is None else np.full(int(n), v, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(0, int(self.value) + 1, size=n)
        if self.kind == "geometric":
            return rng.geometric(1.0 / (self.value + 1.0), size=n) - 1
        return rng.poisson(self.value, size=n)


def generate_delay(delay: DelayModel, k: int, rng: np.random.Generator) -> int:
    """Realized staleness for step k: raw draw clipped to min(k, cap)."""
    if k < 0:
        raise TypeMismatch("step index must be non-negative")
    raw = int(delay.draw_raw(rng))
    return min(raw, k, int(delay.cap))


@dataclass
class RunConfig:
    """One run: step size, momentum, staleness process, horizon, seed, start."""

    eta: float
    mu: float
    delay: DelayModel
    horizon: int
    seed: int
    init: np.ndarray

    def __post_init__(self) -> None:
        # eta == 0 is allowed: the run degenerates to a constant trajectory,
        # which is a useful null case in tests.
        if self.eta < 0.0:
            raise TypeMismatch("eta must be non-negative")
        if not 0.0 <= self.mu < 1.0:
            raise TypeMismatch(f"mu must lie in [0, 1), got {self.mu}")
        if self.horizon < 0:
            raise TypeMismatch("horizon must be non-negative")
        self.init = np.asarray(self.init, dtype=np.float64)
        norm = float(np.linalg.norm(self.init))
        if abs(norm - 1.0) > 1e-12:
            raise TypeMismatch(f"initial vector must be unit length, |1 - ||v0||| = {abs(norm - 1.0):.2e}")


def make_streams(seed: int, cell: int = 0, replica: int = 0):
    """(data, delay) generator pair for one replica of one grid cell."""
    return seed_stream(seed, cell, replica, 0), seed_stream(seed, cell, replica, 1)


@dataclass
class SolverState:
    """Iterate history for stepping by hand: current, previous, and a ring
    buffer holding the last cap+1 iterates for O(1) stale reads."""

    step: int
    ring: np.ndarray
    head: int
    cap: int
    previous: np.ndarray

    @classmethod
    def start(cls, init, cap: int) -> "SolverState":
        init = np.asarray(init, dtype=np.float64)
        length = max(int(cap), 1) + 1
        ring = np.tile(init, (length, 1))
        return cls(step=0, ring=ring, head=0, cap=int(cap), previous=init.copy())

    @property
    def current(self) -> np.ndarray:
        return self.ring[self.head]

    def read(self, tau: int) -> np.ndarray:
        """Iterate tau updates ago, clipped to the start of the run."""
        if tau > self.cap:
            raise DelayExceedsCap(f"tau={tau} exceeds history cap {self.cap}")
        t_eff = min(int(tau), self.step)
        return self.ring[(self.head - t_eff) % self.ring.shape[0]]

    def history(self) -> np.ndarray:
        """Stored iterates newest first; history()[0] is the current one."""
        length = self.ring.shape[0]
        order = (self.head - np.arange(length)) % length
        return self.ring[order]


def async_step(state: SolverState, sample: np.ndarray, delay: int,
               eta: float, mu: float) -> SolverState:
    """Advance one update in place and return the state.

    The gradient is evaluated at the stale read state.read(delay); the
    momentum difference uses the fresh current and previous iterates.
    """
    v = state.current
    v_read = state.read(delay)
    p = np.einsum("d,d->", sample, v_read)
    g = p * sample - (p * p) * v_read
    v_next = v + mu * (v - state.previous) + eta * g
    length = state.ring.shape[0]
    new_head = (state.head + 1) % length
    state.previous = v.copy()
    state.ring[new_head] = v_next
    state.head = new_head
    state.step += 1
    return state


@dataclass
class Trajectory:
    """Recorded run in the rotated basis, plus streaming run statistics.

    The tau column holds the staleness consumed by the update that produced
    that row's iterate (0 for the initial row).  max_jump and max_norm_sq
    cover every step, not just recorded ones.
    """

    ks: np.ndarray
    h: np.ndarray
    tau: np.ndarray
    config: RunConfig
    stride: int
    max_jump: float
    max_norm_sq: float
    clip_count: int
    diverged: bool
    final_h: np.ndarray
    prev_h: np.ndarray
    mean_field: bool = False

    @property
    def dim(self) -> int:
        return self.h.shape[1]

    @property
    def alignments(self) -> np.ndarray:
        return self.h ** 2

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.h, axis=1)

    @property
    def times(self) -> np.ndarray:
        return self.ks * self.config.eta

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        d = self.dim
        header = "k,tau," + ",".join(f"a{i}" for i in range(1, d + 1)) + ",norm"
        a = self.alignments
        n = self.norms
        lines = [header]
        for row in range(self.ks.size):
            vals = ",".join(f"{a[row, j]:.17g}" for j in range(d))
            lines.append(f"{int(self.ks[row])},{int(self.tau[row])},{vals},{n[row]:.17g}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            try:
                Path(path).write_text(text)
            except OSError as exc:
                raise IoFailure(f"cannot write {path}: {exc}") from exc
        return text


@dataclass
class PhaseWatch:
    """Streaming threshold detection done inside the engine.

    Records the first step at which (a) the saddle coordinate's alignment
    drops below 1 - delta_sq, (b) the leading alignment reaches 1 - delta_sq,
    and (c) the residual stays at or below eps for window consecutive steps
    (the recorded step is the start of the streak).  Optionally captures the
    residual at given target steps and the running maximum deviation of one
    coordinate from its start value.
    """

    delta_sq: float
    eps: float
    window: int
    saddle_component: int = 2
    target_steps: tuple = ()
    escape_component: Optional[int] = None


@dataclass
class BatchResult:
    final_h: np.ndarray
    prev_h: np.ndarray
    max_jump_sq: np.ndarray
    max_norm_sq: np.ndarray
    clip_count: np.ndarray
    diverged: np.ndarray
    record_ks: Optional[np.ndarray] = None
    record_h: Optional[np.ndarray] = None
    record_tau: Optional[np.ndarray] = None
    t1_step: Optional[np.ndarray] = None
    t2_step: Optional[np.ndarray] = None
    t3_step: Optional[np.ndarray] = None
    resid_at_targets: Optional[np.ndarray] = None
    escape_max_dev: Optional[np.ndarray] = None


def run_replicas(
    model: SpectralModel,
    eta: float,
    mu,
    delay: DelayModel,
    horizon: int,
    streams: Sequence,
    init_h: np.ndarray,
    *,
    stride: int = 100,
    record: bool = True,
    mean_field: bool = False,
    watch: Optional[PhaseWatch] = None,
) -> BatchResult:
    """Run one batch of replicas in lockstep.

    mu may be a scalar or a per-replica vector, which lets a sweep stack
    several momentum values sharing one staleness model into a single batch;
    each row still consumes only its own generator pair from streams, so the
    result for a row never depends on what else is stacked with it.
    In mean_field mode the sample covariance is replaced by its expectation
    and no data randomness is consumed.
    """
    d = model.dim
    n_rep = len(streams)
    lam = model.eigenvalues
    sqrt_lam = model.sqrt_eigenvalues
    mu_arr = np.asarray(mu, dtype=np.float64)
    mu_col = float(mu_arr) if mu_arr.ndim == 0 else mu_arr.reshape(n_rep, 1)
    cap = int(delay.cap)
    length = max(cap, 1) + 1
    init_h = np.asarray(init_h, dtype=np.float64)

    ring = np.empty((length, n_rep, d))
    ring[:] = init_h
    head = 0
    v = ring[head]
    v_prev = v.copy()

    max_jump_sq = np.zeros(n_rep)
    max_norm_sq = np.ones(n_rep)
    clip_count = np.zeros(n_rep, dtype=np.int64)
    fixed = delay.kind == "fixed"
    fixed_tau = int(delay.value) if fixed else 0
    rows = np.arange(n_rep)

    rec_ks: list = []
    rec_idx = 0
    rec_h = rec_tau = None
    if record:
        ks_list = list(range(0, horizon + 1, max(int(stride), 1)))
        if ks_list[-1] != horizon:
            ks_list.append(horizon)
        rec_ks = ks_list
        rec_h = np.empty((n_rep, len(ks_list), d))
        rec_tau = np.zeros((n_rep, len(ks_list)), dtype=np.int64)
        rec_h[:, 0] = init_h
        rec_idx = 1
    next_record = rec_ks[rec_idx] if record and rec_idx < len(rec_ks) else -1

    t1 = t2 = t3 = streak = None
    resid_targets = None
    escape_dev = None
    escape_anchor = 0.0
    if watch is not None:
        t1 = np.full(n_rep, -1, dtype=np.int64)
        t2 = np.full(n_rep, -1, dtype=np.int64)
        t3 = np.full(n_rep, -1, dtype=np.int64)
        streak = np.full(n_rep, -1, dtype=np.int64)
        if watch.target_steps:
            resid_targets = np.full((len(watch.target_steps), n_rep), np.nan)
        if watch.escape_component is not None:
            escape_dev = np.zeros(n_rep)
            escape_anchor = init_h[..., watch.escape_component - 1]

    with np.errstate(over="ignore", invalid="ignore"):
        k = 0
        while k < horizon:
            nb = min(_BLOCK, horizon - k)
            if not mean_field:
                y_blk = np.empty((nb, n_rep, d))
                for r, (data_rng, _) in enumerate(streams):
                    y_blk[:, r, :] = sqrt_lam * draw_coordinates(model, data_rng, nb)
            if not fixed:
                tau_blk = np.empty((nb, n_rep), dtype=np.int64)
                for r, (_, delay_rng) in enumerate(streams):
                    tau_blk[:, r] = delay.draw_raw(delay_rng, nb)
            for j in range(nb):
                if fixed:
                    t_eff = min(fixed_tau, k)
                    v_read = ring[(head - t_eff) % length]
                    tau_real = None
                else:
                    raw = tau_blk[j]
                    capped = np.minimum(raw, cap)
                    clip_count += raw > cap
                    tau_real = np.minimum(capped, k)
                    v_read = ring[(head - tau_real) % length, rows]
                if mean_field:
                    w = lam * v_read
                    ray = np.einsum("rd,rd->r", v_read, w)
                    g = w - ray[:, None] * v_read
                else:
                    x = y_blk[j]
                    p = np.einsum("rd,rd->r", x, v_read)
                    g = p[:, None] * x - (p * p)[:, None] * v_read
                v_next = v + mu_col * (v - v_prev) + eta * g
                dj = v_next - v
                np.fmax(max_jump_sq, np.einsum("rd,rd->r", dj, dj), out=max_jump_sq)
                nn = np.einsum("rd,rd->r", v_next, v_next)
                np.fmax(max_norm_sq, nn, out=max_norm_sq)
                k += 1
                if watch is not None:
                    a1 = v_next[:, 0] ** 2
                    a_s = v_next[:, watch.saddle_component - 1] ** 2
                    resid = nn - a1
                    hi = 1.0 - watch.delta_sq
                    np.copyto(t1, k, where=(t1 < 0) & (a_s < hi))
                    np.copyto(t2, k, where=(t2 < 0) & (a1 >= hi))
                    inside = resid <= watch.eps
                    streak[~inside] = -1
                    fresh = inside & (streak < 0)
                    streak[fresh] = k
                    done = (t3 < 0) & inside & (k - streak + 1 >= watch.window)
                    t3[done] = streak[done]
                    if resid_targets is not None and k in watch.target_steps:
                        resid_targets[watch.target_steps.index(k)] = resid
                    if escape_dev is not None:
                        np.fmax(escape_dev,
                                np.abs(v_next[:, watch.escape_component - 1] - escape_anchor),
                                out=escape_dev)
                head = (head + 1) % length
                ring[head] = v_next
                v_prev = v
                v = ring[head]
                if k == next_record:
                    rec_h[:, rec_idx] = v
                    if tau_real is not None:
                        rec_tau[:, rec_idx] = tau_real
                    elif fixed:
                        rec_tau[:, rec_idx] = min(fixed_tau, k - 1)
                    rec_idx += 1
                    next_record = rec_ks[rec_idx] if rec_idx < len(rec_ks) else -1

    final = v.copy()
    diverged = (max_norm_sq > 2.0) | ~np.isfinite(max_norm_sq) \
        | ~np.isfinite(final).all(axis=1)
    return BatchResult(
        final_h=final,
        prev_h=v_prev.copy(),
        max_jump_sq=max_jump_sq,
        max_norm_sq=max_norm_sq,
        clip_count=clip_count,
        diverged=diverged,
        record_ks=np.asarray(rec_ks, dtype=np.int64) if record else None,
        record_h=rec_h,
        record_tau=rec_tau,
        t1_step=t1,
        t2_step=t2,
        t3_step=t3,
        resid_at_targets=resid_targets,
        escape_max_dev=escape_dev,
    )


def run_trajectory(model: SpectralModel, config: RunConfig, *, stride: int = 100,
                   mean_field: bool = False, watch: Optional[PhaseWatch] = None) -> Trajectory:
    """Run one replica and return its recorded trajectory.

    Deterministic given (model, config): the data and delay streams are
    derived from config.seed at cell 0, replica 0.  Use stride=1 when the
    trajectory will feed the step-level diagnostics.
    """
    h0 = config.init if model.identity_rotation else model.rotation.T @ config.init
    res = run_replicas(
        model, config.eta, config.mu, config.delay, config.horizon,
        [make_streams(config.seed, 0, 0)], h0,
        stride=stride, record=True, mean_field=mean_field, watch=watch,
    )
    return Trajectory(
        ks=res.record_ks,
        h=res.record_h[0],
        tau=res.record_tau[0],
        config=config,
        stride=max(int(stride), 1),
        max_jump=float(np.sqrt(res.max_jump_sq[0])),
        max_norm_sq=float(res.max_norm_sq[0]),
        clip_count=int(res.clip_count[0]),
        diverged=bool(res.diverged[0]),
        final_h=res.final_h[0],
        prev_h=res.prev_h[0],
        mean_field=mean_field,
    )
