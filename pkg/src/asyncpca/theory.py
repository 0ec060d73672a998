"""Closed-form limiting objects for the stale-gradient momentum iteration.

Everything here is a pure function of its arguments: the deterministic
alignment flow and its solution, the linear-noise second moment near the
optimum, the three phase-time predictions with both published constant
variants, staleness budgets, and effective per-worker iteration counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .core import (
    GammaOutOfRange,
    IndexIsLeading,
    ProbabilityOutOfRange,
    SpectralModel,
    StepTooLarge,
    TypeMismatch,
)

Variant = Literal["main", "alt"]
Regime = Literal["ode", "sde"]

# Scale constants for the asymptotic staleness budgets, fitted once against
# the reference tradeoff sweep (knee of the mu=0.9 row at fixed delay 30,
# eta=5e-4, spectrum (4,3,2,1)) and frozen.  The fit pins the budget exponent
# at CALIBRATED_GAMMA; tests re-derive the coefficient from the same numbers.
CALIBRATED_GAMMA = 0.25
CALIBRATED_ODE_COEFF = 40.12441829858532

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Rational approximation coefficients for the inverse normal CDF
# (central region plus symmetric tails), polished below with one Newton step.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
           3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, absolute error below 1e-9.

    Rational approximation with one Newton polish step against the
    erfc-based CDF.  Upper-tail arguments are reflected through the exact
    complement 1 - p, so the polish never differences values stored next
    to 1.0 where doubles lose absolute resolution.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ProbabilityOutOfRange(f"p must lie in (0, 1), got {p}")
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    pdf = math.exp(-0.5 * x * x) / _SQRT2PI
    if pdf > 0.0:
        x -= (normal_cdf(x) - p) / pdf
    return x


def ode_solution(h0, t, model: SpectralModel, mu: float):
    """Deterministic-limit iterate at time t, started from unit vector h0.

    Componentwise h0_i * exp(lambda_i t / (1 - mu)), normalized.  The largest
    exponent among active components is factored out first so the evaluation
    cannot overflow even for large t or mu close to 1.  Accepts scalar t or a
    1-d array of times (rows of the result).
    """
    h0 = np.asarray(h0, dtype=np.float64)
    lam = model.eigenvalues
    active = h0 != 0.0
    if not active.any():
        raise TypeMismatch("initial vector must be nonzero")
    shift = float(lam[active].max())
    scale = (lam - shift) / (1.0 - mu)
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 0:
        w = h0 * np.exp(scale * float(t_arr))
        return w / np.linalg.norm(w)
    w = h0 * np.exp(np.outer(t_arr, scale))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def ou_second_moment(u0_sq: float, component: int, t, model: SpectralModel, mu: float):
    """Second moment of the rescaled non-leading coordinate at time t.

    component is 1-based; component 1 is the leading direction and is
    rejected.  The moment relaxes exponentially to its stationary value
    alpha_{i,1}^2 / (2 (1 - mu) (lambda_1 - lambda_i)).
    """
    i = int(component)
    if i == 1:
        raise IndexIsLeading("second-moment formula applies to non-leading components only")
    if not 2 <= i <= model.dim:
        raise TypeMismatch(f"component must be in 2..{model.dim}, got {i}")
    lam1 = float(model.eigenvalues[0])
    lam_i = float(model.eigenvalues[i - 1])
    a_i1 = model.alpha(i, 1)
    stationary = a_i1 * a_i1 / (2.0 * (1.0 - mu) * (lam1 - lam_i))
    rate = 2.0 * (lam1 - lam_i) / (1.0 - mu)
    return stationary + (u0_sq - stationary) * np.exp(-rate * np.asarray(t, dtype=np.float64))


@dataclass
class PhaseParams:
    """Inputs shared by the phase-time formulas.

    delta defaults to c_delta * sqrt(eta) when not given explicitly.
    """

    model: SpectralModel
    eta: float
    mu: float
    eps: float = 1e-3
    nu: float = 0.5
    delta: Optional[float] = None
    c_delta: float = 1.0
    gamma: float = CALIBRATED_GAMMA

    def __post_init__(self) -> None:
        if self.eta <= 0.0:
            raise TypeMismatch("eta must be positive")
        if not 0.0 <= self.mu < 1.0:
            raise TypeMismatch("mu must lie in [0, 1)")
        if self.eps <= 0.0:
            raise TypeMismatch("eps must be positive")
        if not 0.0 < self.nu < 1.0:
            raise ProbabilityOutOfRange(f"nu must lie in (0, 1), got {self.nu}")
        if self.delta is None:
            self.delta = self.c_delta * math.sqrt(self.eta)
        if not 0.0 < self.delta < 1.0:
            raise TypeMismatch(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def delta_sq(self) -> float:
        return self.delta * self.delta


def phase1_time(p: PhaseParams, variant: Variant = "main") -> float:
    """Predicted time to leave the saddle neighborhood.

    The two variants differ in the quantile argument: (1 + nu/2)/2 for the
    main form, (1 + nu)/2 for the alternative.
    """
    if variant == "main":
        q = normal_quantile((1.0 + p.nu / 2.0) / 2.0)
    elif variant == "alt":
        q = normal_quantile((1.0 + p.nu) / 2.0)
    else:
        raise TypeMismatch(f"unknown variant {variant!r}")
    gap = p.model.eigengap
    a12 = p.model.alpha(1, 2)
    one_minus = 1.0 - p.mu
    arg = 2.0 * one_minus * p.delta_sq * gap / (p.eta * q * q * a12 * a12) + 1.0
    return one_minus / (2.0 * gap) * math.log(arg)


def phase2_time(p: PhaseParams) -> float:
    """Published traverse-time constant ((1-mu)/(2 gap)) log((1-d^2)/d^2).

    For the logistic alignment flow this value is the time from alignment
    delta^2 to the midpoint 1/2; the full crossing to 1 - delta^2 takes twice
    as long (see phase2_transit_time).
    """
    gap = p.model.eigengap
    d2 = p.delta_sq
    return (1.0 - p.mu) / (2.0 * gap) * math.log((1.0 - d2) / d2)


def phase2_transit_time(p: PhaseParams) -> float:
    """Exact deterministic-limit time from alignment delta^2 to 1 - delta^2.

    By the symmetry of the logistic flow around its midpoint this equals
    2 * phase2_time(p); root-finding on ode_solution reproduces it to
    solver precision.
    """
    return 2.0 * phase2_time(p)


def phase3_time(p: PhaseParams, variant: Variant = "main") -> float:
    """Predicted time to reach residual eps near the optimum.

    Requires (1-mu) * gap * eps to dominate the step-size floor; otherwise
    the formula has no finite value and StepTooLarge is raised.  The result
    is negative when the target is already inside the delta-neighborhood
    accuracy, which simply means no extra time is predicted.
    """
    gap = p.model.eigengap
    one_minus = 1.0 - p.mu
    if variant == "main":
        floor = 4.0 * p.eta * p.model.phi
        num = 8.0 * one_minus * gap * p.delta_sq
    elif variant == "alt":
        floor = 2.0 * p.eta * p.model.phi
        num = one_minus * gap * p.delta_sq
    else:
        raise TypeMismatch(f"unknown variant {variant!r}")
    den = one_minus * gap * p.eps - floor
    if den <= 0.0:
        raise StepTooLarge(
            f"eta={p.eta} too large: need (1-mu)*gap*eps > {floor:.3e} for the {variant} form"
        )
    return one_minus / (2.0 * gap) * math.log(num / den)


def delay_budget(mu: float, eta: float, gamma: float, model: SpectralModel,
                 regime: Regime = "ode", c_tau: float = 1.0) -> float:
    """Admissible staleness scale under which the limit dynamics survive.

    ode regime:  c_tau (1-mu)^2 / (lambda_1 eta^(1-gamma)),   gamma in (0, 1]
    sde regime:  c_tau (1-mu)^2 / ((lambda_1 + bound) eta^(1/2-gamma)),
                 gamma in (0, 1/2]
    """
    if regime == "ode":
        if not 0.0 < gamma <= 1.0:
            raise GammaOutOfRange(f"ode regime needs gamma in (0, 1], got {gamma}")
        return c_tau * (1.0 - mu) ** 2 / (float(model.eigenvalues[0]) * eta ** (1.0 - gamma))
    if regime == "sde":
        if not 0.0 < gamma <= 0.5:
            raise GammaOutOfRange(f"sde regime needs gamma in (0, 1/2], got {gamma}")
        denom = (float(model.eigenvalues[0]) + model.data_bound) * eta ** (0.5 - gamma)
        return c_tau * (1.0 - mu) ** 2 / denom
    raise TypeMismatch(f"unknown regime {regime!r}")


def budget_exponent(tau: float, mu: float, eta: float, model: SpectralModel,
                    regime: Regime = "ode", c_tau: float = 1.0) -> Optional[float]:
    """Largest exponent gamma whose budget admits the given staleness.

    Returns the regime's upper limit for tau = 0 and None when no admissible
    exponent exists (the staleness exceeds the budget at every gamma).
    """
    cap = 1.0 if regime == "ode" else 0.5
    if regime not in ("ode", "sde"):
        raise TypeMismatch(f"unknown regime {regime!r}")
    if tau <= 0:
        return cap
    lam1 = float(model.eigenvalues[0])
    scale = lam1 if regime == "ode" else lam1 + model.data_bound
    head = c_tau * (1.0 - mu) ** 2 / (scale * tau)
    gamma = cap - math.log(head) / math.log(eta)
    if gamma <= 0.0:
        return None
    return min(cap, gamma)


def predict_optimal_delay(mu: float, eta: float, model: SpectralModel) -> float:
    """Staleness knee predicted by the frozen budget calibration."""
    return delay_budget(mu, eta, CALIBRATED_GAMMA, model, regime="ode",
                        c_tau=CALIBRATED_ODE_COEFF)


def effective_complexity(phase: int, p: PhaseParams, tau: float,
                         variant: Variant = "main") -> float:
    """Per-worker effective iteration count T_phase / (tau * eta).

    Phase 2 uses the full crossing duration, the quantity that actually
    elapses between the two alignment thresholds.
    """
    if tau < 1:
        raise TypeMismatch(f"tau must be at least 1, got {tau}")
    if phase == 1:
        t_phase = phase1_time(p, variant)
    elif phase == 2:
        t_phase = phase2_transit_time(p)
    elif phase == 3:
        t_phase = phase3_time(p, variant)
    else:
        raise TypeMismatch(f"phase must be 1, 2 or 3, got {phase}")
    return t_phase / (tau * p.eta)
