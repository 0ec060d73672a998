"""Acceptance scorecard: one test per claim the library is sold on.

Run with -v to get a pass/fail line per criterion.  The expensive inputs
(the full tradeoff sweep, the Euler-Maruyama path cloud, the long phase
experiment) are built once per module and shared; every tolerance is a
literal pinned next to its assertion.  Nothing here loosens on failure:
a red line means the claim is not met as stated.
"""

from __future__ import annotations

import math
import os

import numpy as np
import pytest

from asyncpca import (
    CALIBRATED_GAMMA,
    DelayModel,
    PhaseParams,
    RunConfig,
    SweepGrid,
    async_error,
    budget_exponent,
    build_spectral_model,
    decompose,
    draw_coordinates,
    make_streams,
    ode_solution,
    ou_second_moment,
    phase2_transit_time,
    run_phase_experiment,
    run_replicas,
    run_sweep,
    run_trajectory,
    seed_stream,
    speedup_curve,
)
from asyncpca.experiments import default_workers
from conftest import SADDLE, unit

# ---------------------------------------------------------------- shared grid

SWEEP_SEED = 0
SWEEP_ETA = 5e-4
SWEEP_HORIZON = 200_000
SWEEP_REPLICAS = 100
SWEEP_MUS = (0.7, 0.8, 0.85, 0.9, 0.95)
SWEEP_TAUS = tuple(range(0, 140, 10))
# Largest harmless delay the theory calibration predicts per momentum value.
KNEE_TARGETS = (120, 80, 60, 30, 10)


@pytest.fixture(scope="module")
def tradeoff(model):
    """Full momentum x staleness sweep, plus the CPU seconds it consumed."""
    grid = SweepGrid(
        mus=list(SWEEP_MUS),
        taus=list(SWEEP_TAUS),
        base=RunConfig(eta=SWEEP_ETA, mu=0.0, delay=DelayModel.fixed(0),
                       horizon=SWEEP_HORIZON, seed=SWEEP_SEED, init=SADDLE),
        replicas=SWEEP_REPLICAS,
    )
    before = os.times()
    curve = run_sweep(grid, model, workers=default_workers())
    after = os.times()
    cpu = (after.user - before.user
           + after.system - before.system
           + after.children_user - before.children_user
           + after.children_system - before.children_system)
    return curve, cpu


def test_criterion_01_tradeoff_knees(tradeoff):
    """The estimated largest harmless delay decreases strictly with momentum
    and lands within a factor 2.5 of the calibrated targets, on a desk-scale
    budget (8 cores x 10 minutes of CPU covers any core count).

    Known red at mu >= 0.9, deliberately: the 10% mean-error rule lands
    below the pinned windows there because the smallest nonzero grid delay
    already inflates the stationary floor past 10% (and tau = 20 at
    mu = 0.95 destabilizes outright).  Verified across seeds; the windows
    stay strict rather than get widened to force a pass."""
    curve, cpu_seconds = tradeoff
    assert cpu_seconds <= 8 * 600.0

    hats = []
    for mu in SWEEP_MUS:
        hat = curve.tau_hat[mu]
        assert hat is not None, f"no harmless delay found at mu={mu}"
        hats.append(float(hat))
    assert all(a > b for a, b in zip(hats, hats[1:])), hats
    for hat, target in zip(hats, KNEE_TARGETS):
        assert target / 2.5 <= hat <= target * 2.5, (hat, target)


# ------------------------------------------------------------- criterion 2

def _reference_sync_msgd(lams, eta, mu, seed, horizon, v0):
    """Synchronous momentum power iteration written from scratch: flat loop,
    no delay ring, no batching.  Shares only the data stream and the einsum
    reduction order with the engine, so agreement below is bit for bit."""
    model = build_spectral_model(lams)
    data = model.sqrt_eigenvalues * draw_coordinates(
        model, seed_stream(seed, 0, 0, 0), horizon)
    v = np.array(v0, dtype=np.float64)
    v_prev = v.copy()
    out = np.empty((horizon + 1, v.size))
    out[0] = v
    for k in range(horizon):
        x = data[k]
        p = np.einsum("d,d->", x, v)
        grad = p * x - (p * p) * v
        v, v_prev = v + mu * (v - v_prev) + eta * grad, v
        out[k + 1] = v
    return out


def test_criterion_02_zero_staleness_is_exactly_synchronous():
    """A fixed delay of zero reproduces an independently coded synchronous
    momentum loop bitwise, over 1e4 steps and five random configurations."""
    rng = np.random.default_rng(20260825)
    horizon = 10_000
    for _ in range(5):
        lams = np.sort(rng.uniform(0.5, 4.0, size=4))[::-1].copy()
        lams[0] += 0.25
        eta = float(10.0 ** rng.uniform(-3.8, -2.8))
        mu = float(rng.uniform(0.0, 0.95))
        seed = int(rng.integers(0, 2**31))
        v0 = unit(rng.standard_normal(4))

        model = build_spectral_model(lams)
        cfg = RunConfig(eta=eta, mu=mu, delay=DelayModel.fixed(0),
                        horizon=horizon, seed=seed, init=v0)
        traj = run_trajectory(model, cfg, stride=1)
        ref = _reference_sync_msgd(lams, eta, mu, seed, horizon, v0)
        assert np.array_equal(traj.h, ref)


# ------------------------------------------------------------- criterion 3

def test_criterion_03_step_and_norm_bounds_on_budget_cells(model, tradeoff):
    """On every sweep cell whose staleness admits a budget exponent, each of
    the 100 runs obeys the per-step jump bound 2 C_d eta / (1 - mu) and the
    norm bound 1 + 10 eta^gamma at the cell's operating exponent.  Cells
    outside the budget carry no guarantee (the far corner diverges) and are
    only counted here."""
    curve, _ = tradeoff
    c_d = model.data_bound ** 2
    in_domain = 0
    over_budget = 0
    for cell in curve.cells:
        gamma_max = budget_exponent(cell.tau, cell.mu, SWEEP_ETA, model)
        if gamma_max is None:
            over_budget += 1
            continue
        in_domain += 1
        jump_bound = 2.0 * c_d * SWEEP_ETA / (1.0 - cell.mu)
        worst_jump = math.sqrt(float(cell.max_jump_sq.max()))
        assert worst_jump <= jump_bound, (cell.mu, cell.tau, worst_jump)

        gamma_run = min(gamma_max, CALIBRATED_GAMMA)
        norm_bound = 1.0 + 10.0 * SWEEP_ETA ** gamma_run
        worst_norm = float(cell.max_norm_sq.max())
        assert worst_norm <= norm_bound, (cell.mu, cell.tau, worst_norm)
    assert in_domain == 11
    assert in_domain + over_budget == len(SWEEP_MUS) * len(SWEEP_TAUS)


# ------------------------------------------------------------- criterion 4

def test_criterion_04_deterministic_limit(model):
    """The closed-form flow matches an independent RK4 integration to 1e-8
    over t in [0, 10] for 20 random configurations, and the mean simulated
    alignment tracks the flow within 0.05 over t in [0, 5]."""
    rng = np.random.default_rng(41)
    n = 20
    lam_rows = np.sort(rng.uniform(0.5, 4.0, (n, 4)), axis=1)[:, ::-1].copy()
    lam_rows[:, 0] += 0.25
    mus = rng.uniform(0.0, 0.8, n)
    h0 = rng.standard_normal((n, 4))
    h0 /= np.linalg.norm(h0, axis=1, keepdims=True)

    dt = 1e-4
    steps = 100_000
    every = 1000
    inv = (1.0 / (1.0 - mus))[:, None]

    def rhs(h):
        lh = lam_rows * h
        drive = np.einsum("nd,nd->n", h, lh)[:, None]
        return (lh - drive * h) * inv

    states = np.empty((steps // every, n, 4))
    h = h0.copy()
    for s in range(1, steps + 1):
        k1 = rhs(h)
        k2 = rhs(h + 0.5 * dt * k1)
        k3 = rhs(h + 0.5 * dt * k2)
        k4 = rhs(h + dt * k3)
        h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if s % every == 0:
            states[s // every - 1] = h
    t_checks = dt * every * np.arange(1, steps // every + 1)

    sup = 0.0
    for c in range(n):
        m = build_spectral_model(lam_rows[c])
        exact = ode_solution(h0[c], t_checks, m, float(mus[c]))
        sup = max(sup, float(np.max(np.abs(states[:, c, :] - exact))))
    assert sup <= 1e-8, sup

    eta, horizon, reps = 1e-3, 5000, 200
    start = unit([1.0, 1.0, 1.0, 1.0])
    streams = [make_streams(43, 0, r) for r in range(reps)]
    res = run_replicas(model, eta, 0.0, DelayModel.fixed(0), horizon,
                       streams, start, stride=100)
    mean_a1 = (res.record_h[:, :, 0] ** 2).mean(axis=0)
    pred_a1 = ode_solution(start, res.record_ks * eta, model, 0.0)[:, 0] ** 2
    assert float(np.max(np.abs(mean_a1 - pred_a1))) <= 0.05


# ------------------------------------------------------------- criterion 5

def test_criterion_05_fluctuation_second_moments(model):
    """The transverse second-moment formula agrees with an Euler-Maruyama
    simulation of the limiting linear SDE: 1e5 paths at step 1e-4, compared
    within 3 standard errors at t in {0.1, 0.5, 1, 5} for components 2..4
    and momentum in {0, 0.5, 0.9}.  The nine (momentum, component) readers
    share each path's noise, which only correlates the comparisons."""
    from numba import njit

    mus = (0.0, 0.5, 0.9)
    comps = (2, 3, 4)
    h = 1e-4
    seg_ends = np.array([1000, 5000, 10000, 50000], dtype=np.int64)
    t_grid = seg_ends * h

    lam = model.eigenvalues
    decay = np.empty(9)
    scale = np.empty(9)
    analytic = np.empty((seg_ends.size, 9))
    for c, (mu, i) in enumerate([(m, i) for m in mus for i in comps]):
        theta = (lam[0] - lam[i - 1]) / (1.0 - mu)
        sigma = model.alpha(i, 1) / (1.0 - mu)
        decay[c] = 1.0 - theta * h
        scale[c] = sigma * math.sqrt(h)
        analytic[:, c] = ou_second_moment(0.0, i, t_grid, model, mu)

    @njit(fastmath=True, cache=False)
    def consume(xi, d, s, ends, out, base):
        n_paths = xi.shape[0]
        d0, d1, d2, d3, d4, d5, d6, d7, d8 = d
        s0, s1, s2, s3, s4, s5, s6, s7, s8 = s
        for p in range(n_paths):
            u0 = u1 = u2 = u3 = u4 = u5 = u6 = u7 = u8 = 0.0
            step = 0
            for r in range(ends.size):
                end = ends[r]
                while step < end:
                    z = xi[p, step]
                    u0 = u0 * d0 + s0 * z
                    u1 = u1 * d1 + s1 * z
                    u2 = u2 * d2 + s2 * z
                    u3 = u3 * d3 + s3 * z
                    u4 = u4 * d4 + s4 * z
                    u5 = u5 * d5 + s5 * z
                    u6 = u6 * d6 + s6 * z
                    u7 = u7 * d7 + s7 * z
                    u8 = u8 * d8 + s8 * z
                    step += 1
                out[r, 0, base + p] = u0
                out[r, 1, base + p] = u1
                out[r, 2, base + p] = u2
                out[r, 3, base + p] = u3
                out[r, 4, base + p] = u4
                out[r, 5, base + p] = u5
                out[r, 6, base + p] = u6
                out[r, 7, base + p] = u7
                out[r, 8, base + p] = u8

    n_paths = 100_000
    chunk = 500
    n_steps = int(seg_ends[-1])
    buf = np.empty((chunk, n_steps))
    out = np.empty((seg_ends.size, 9, n_paths))
    children = np.random.SeedSequence(20260520).spawn(n_paths // chunk)
    for c, child in enumerate(children):
        np.random.default_rng(child).standard_normal(out=buf)
        consume(buf, decay, scale, seg_ends, out, c * chunk)

    empirical = np.mean(out * out, axis=2)
    # u is Gaussian, so the sample mean of u^2 has SE sqrt(2) E[u^2] / sqrt(n)
    se = math.sqrt(2.0) * analytic / math.sqrt(n_paths)
    assert np.all(np.abs(empirical - analytic) <= 3.0 * se), (
        np.max(np.abs(empirical - analytic) / se))


# ------------------------------------------------------------- criterion 6

def test_criterion_06_traverse_time(model):
    """The noiseless engine crosses from alignment delta^2 to 1 - delta^2 in
    the predicted traverse time within 5%, and root-finding on the closed
    form reproduces that time to 1e-9."""
    delta = 0.05
    lo_align = delta * delta
    hi_align = 1.0 - delta * delta
    h0 = unit([delta, math.sqrt(1.0 - delta * delta), 0.0, 0.0])
    eta = 2e-4
    for mu in (0.0, 0.5, 0.9):
        p = PhaseParams(model=model, eta=eta, mu=mu, delta=delta)
        predicted = phase2_transit_time(p)

        horizon = int(round(1.2 * predicted / eta)) + 50
        cfg = RunConfig(eta=eta, mu=mu, delay=DelayModel.fixed(0),
                        horizon=horizon, seed=0, init=h0)
        traj = run_trajectory(model, cfg, stride=1, mean_field=True)
        crossed = np.flatnonzero(traj.alignments[:, 0] >= hi_align)
        assert crossed.size > 0, f"never crossed at mu={mu}"
        t_engine = float(traj.ks[crossed[0]]) * eta
        assert abs(t_engine - predicted) <= 0.05 * predicted, (mu, t_engine)

        lo_t, hi_t = 0.0, 4.0 * predicted + 1.0
        assert ode_solution(h0, hi_t, model, mu)[0] ** 2 > hi_align
        for _ in range(100):
            mid = 0.5 * (lo_t + hi_t)
            if ode_solution(h0, mid, model, mu)[0] ** 2 < hi_align:
                lo_t = mid
            else:
                hi_t = mid
        assert abs(0.5 * (lo_t + hi_t) - predicted) <= 1e-9

        # sanity on the bracket's other end: the start sits at delta^2
        assert math.isclose(h0[0] ** 2, lo_align, rel_tol=1e-12)


# ------------------------------------------------------------- criterion 7

PHASE_ETA = 2.5e-6


@pytest.fixture(scope="module")
def phase_report(model):
    """100 replicas from the exact saddle at eta = 2.5e-6, watched against
    the phase-time bundle.  The long horizon covers the slower bundle."""
    p = PhaseParams(model=model, eta=PHASE_ETA, mu=0.5, eps=1e-3, nu=0.5)
    return run_phase_experiment(model, p, DelayModel.fixed(0), 2_420_000,
                                replicas=100, seed=2026)


def test_criterion_07a_escape_probability(phase_report):
    """At least one escape-time form holds with the promised coverage: the
    Wilson 95% lower bound on P[t1 <= T1] clears 1 - nu = 0.5."""
    lows = [phase_report.probabilities[f"escape_by_T1_{v}"][1]
            for v in ("main", "alt")]
    assert max(lows) >= 0.5, phase_report.probabilities


def test_criterion_07b_settle_probability(phase_report):
    """At least one bundle form settles with the promised coverage: the
    Wilson 95% lower bound on P[residual <= eps at T1 + T2 + T3] clears 3/4."""
    lows = [phase_report.probabilities[f"settled_at_bundle_{v}"][1]
            for v in ("main", "alt")]
    assert max(lows) >= 0.75, phase_report.probabilities


# ------------------------------------------------------------- criterion 8

def test_criterion_08_staleness_drift_vanishes_with_step(model):
    """With the delay sized to the diffusion-scale budget, the accumulated
    stale-minus-fresh drift shrinks as the step size does (20-replica
    averages, strictly decreasing), and vanishes identically at zero delay."""
    mu = 0.5
    scale = float(model.eigenvalues[0]) + model.data_bound
    frozen = {4e-3: 13, 1e-3: 19, 2.5e-4: 27}
    avg_sup = []
    for eta, tau_expect in frozen.items():
        tau = math.floor(100.0 * (1.0 - mu) ** 2 / (scale * eta ** 0.25))
        assert tau == tau_expect
        horizon = int(round(2.0 / eta))
        sups = []
        for r in range(20):
            cfg = RunConfig(eta=eta, mu=mu, delay=DelayModel.fixed(tau),
                            horizon=horizon, seed=900 + r, init=SADDLE)
            traj = run_trajectory(model, cfg, stride=1)
            sups.append(async_error(traj, model).sup_norm)
        avg_sup.append(float(np.mean(sups)))
    assert avg_sup[0] > avg_sup[1] > avg_sup[2], avg_sup

    cfg0 = RunConfig(eta=1e-3, mu=mu, delay=DelayModel.fixed(0),
                     horizon=2000, seed=901, init=SADDLE)
    acct = async_error(run_trajectory(model, cfg0, stride=1), model)
    assert acct.sup_norm == 0.0
    assert np.all(acct.step_terms == 0.0)
    assert np.all(acct.running == 0.0)


# ------------------------------------------------------------- criterion 9

def test_criterion_09_decomposition_reassembly_and_sync_null(model):
    """The update decomposition reassembles every recorded step to 1e-12,
    and its momentum-vs-target gap is exactly zero without momentum or
    staleness."""
    cfg = RunConfig(eta=1e-3, mu=0.9, delay=DelayModel.poisson(10.0),
                    horizon=10_000, seed=77,
                    init=unit([0.05, 1.0, 0.05, 0.05]))
    parts = decompose(run_trajectory(model, cfg, stride=1), model)
    assert float(parts.recon_gap.max()) <= 1e-12

    cfg0 = RunConfig(eta=1e-3, mu=0.0, delay=DelayModel.fixed(0),
                     horizon=10_000, seed=78,
                     init=unit([0.05, 1.0, 0.05, 0.05]))
    parts0 = decompose(run_trajectory(model, cfg0, stride=1), model)
    assert np.all(parts0.err == 0.0)


# ------------------------------------------------------------ criterion 10

def test_criterion_10_under_budget_speedup_ratios(model):
    """Doubling the staleness inside the budget roughly halves the effective
    per-worker step count: consecutive ratios across tau in {5, 10, 20} land
    in [1.6, 2.4]."""
    p = PhaseParams(model=model, eta=5e-4, mu=0.5)
    pts = speedup_curve(p, (5, 10, 20), 15_000, replicas=100, seed=6)
    for pt in pts:
        assert pt.budget_gamma is not None, pt.tau
        assert pt.reached[1] >= 80, (pt.tau, pt.reached)
    entries = [pt.entry_emp for pt in pts]
    for big, small in zip(entries, entries[1:]):
        assert 1.6 <= big / small <= 2.4, entries
