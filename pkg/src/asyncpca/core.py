"""Spectral model, bounded data samplers, seed splitting, and error types.

The covariance is always handled through its eigenpairs (Q, lambda).  Samples
are produced as X = Q diag(sqrt(lambda)) z for a bounded coordinate vector z,
so every draw satisfies ||X|| <= data_bound exactly and the rotated sample
Y = Q^T X has independent coordinates with known fourth moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

ORTHOGONALITY_TOL = 1e-10

DEFAULT_MOMENT_SAMPLES = 1_000_000


class AsyncPcaError(Exception):
    """Base class for all library-specific errors."""


class NonDescendingSpectrum(AsyncPcaError):
    """Eigenvalues must be positive, non-increasing, with a strict gap on top."""


class NotOrthogonal(AsyncPcaError):
    """Supplied rotation matrix is not orthogonal within tolerance."""


class DelayExceedsCap(AsyncPcaError):
    """Requested staleness is larger than the history buffer allows."""


class StepTooLarge(AsyncPcaError):
    """Step size too large for the requested closed-form evaluation."""


class GammaOutOfRange(AsyncPcaError):
    """Budget exponent outside the valid range for the chosen regime."""


class ProbabilityOutOfRange(AsyncPcaError):
    """Probability argument outside the open interval (0, 1)."""


class IndexIsLeading(AsyncPcaError):
    """Component 1 passed where a non-leading component is required."""


class NeedsFullTrace(AsyncPcaError):
    """Diagnostic requires a stride-1 trajectory."""


class UnknownKey(AsyncPcaError):
    """Configuration contains a key the command does not understand."""


class TypeMismatch(AsyncPcaError):
    """Value has the wrong type or violates its domain constraint."""


class MissingRequired(AsyncPcaError):
    """A required configuration key is absent."""


class IoFailure(AsyncPcaError):
    """Failed to read or write an artifact file."""


def seed_stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one node of the seed tree.

    Streams with distinct paths are statistically independent and do not
    depend on the order in which they are created, so parallel replicas are
    reproducible under any scheduling.
    """
    key = tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


@dataclass
class SpectralModel:
    """Covariance Sigma = Q diag(eigenvalues) Q^T plus sampler constants.

    data_bound is the exact bound on ||X|| for the active sampler.
    fourth_moments[i, j] holds sqrt(E[Y_i^2 Y_j^2]) for the rotated sample Y,
    and phi is the sum of squared first-row entries.
    """

    dim: int
    eigenvalues: np.ndarray
    rotation: np.ndarray
    data_bound: float
    fourth_moments: np.ndarray
    phi: float
    sampler: str = "rademacher"
    trunc_radius: float = 3.0
    trunc_scale: float = 1.0
    identity_rotation: bool = True

    @property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @property
    def eigengap(self) -> float:
        return float(self.eigenvalues[0] - self.eigenvalues[1])

    def alpha(self, i: int, j: int) -> float:
        """Fourth-moment entry for 1-based component indices."""
        return float(self.fourth_moments[i - 1, j - 1])


def _truncation_scale(radius: float) -> float:
    """Std of a standard normal conditioned on |w| <= radius."""
    if radius <= 0:
        raise TypeMismatch("truncation radius must be positive")
    z = math.erf(radius / math.sqrt(2.0))
    pdf = math.exp(-0.5 * radius * radius) / math.sqrt(2.0 * math.pi)
    return math.sqrt(1.0 - 2.0 * radius * pdf / z)


def draw_coordinates(model: SpectralModel, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Draw the latent coordinate vector(s) z for the model's sampler.

    Returns shape (dim,) when n is None, else (n, dim).  For the default
    sampler, drawing a block of n vectors consumes the generator identically
    to n successive single draws, which is what makes batched and stepwise
    simulation bitwise interchangeable.
    """
    shape = (model.dim,) if n is None else (int(n), model.dim)
    if model.sampler == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    if model.sampler == "truncated_gaussian":
        w = rng.standard_normal(shape)
        bad = np.abs(w) > model.trunc_radius
        while bad.any():
            w[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(w) > model.trunc_radius
        return w / model.trunc_scale
    raise TypeMismatch(f"unknown sampler {model.sampler!r}")


def sample_data(model: SpectralModel, rng: np.random.Generator) -> np.ndarray:
    """One data vector X with E[X] = 0, E[X X^T] = Sigma, ||X|| <= data_bound."""
    y = model.sqrt_eigenvalues * draw_coordinates(model, rng)
    if model.identity_rotation:
        return y
    return model.rotation @ y


def build_spectral_model(
    eigenvalues,
    rotation: Optional[np.ndarray] = None,
    moment_samples: int = DEFAULT_MOMENT_SAMPLES,
    sampler: str = "rademacher",
    trunc_radius: float = 3.0,
    moment_seed: int = 0,
) -> SpectralModel:
    """Validate eigenpairs and precompute sampler-dependent constants.

    For the default sampler the bound and fourth moments are exact closed
    forms.  Other samplers fall back to a Monte Carlo estimate with
    moment_samples draws seeded by moment_seed, so identical arguments give
    bitwise identical models.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.ndim != 1 or lam.size < 2:
        raise NonDescendingSpectrum("need at least two eigenvalues in a 1-d sequence")
    if np.any(lam <= 0.0):
        raise NonDescendingSpectrum("eigenvalues must be strictly positive")
    if not lam[0] > lam[1]:
        raise NonDescendingSpectrum("leading eigenvalue must strictly exceed the second")
    if np.any(np.diff(lam) > 0.0):
        raise NonDescendingSpectrum("eigenvalues must be non-increasing")
    d = int(lam.size)

    if rotation is None:
        q = np.eye(d)
        identity = True
    else:
        q = np.asarray(rotation, dtype=np.float64)
        if q.shape != (d, d):
            raise NotOrthogonal(f"rotation must be {d}x{d}, got {q.shape}")
        err = np.max(np.abs(q.T @ q - np.eye(d)))
        if err > ORTHOGONALITY_TOL:
            raise NotOrthogonal(f"max |Q^T Q - I| = {err:.3e} exceeds {ORTHOGONALITY_TOL}")
        identity = bool(np.array_equal(q, np.eye(d)))

    if sampler == "rademacher":
        bound = math.sqrt(float(lam.sum()))
        alpha = np.sqrt(np.outer(lam, lam))
        scale = 1.0
        model = SpectralModel(d, lam, q, bound, alpha, 0.0, sampler, trunc_radius, scale, identity)
    elif sampler == "truncated_gaussian":
        scale = _truncation_scale(trunc_radius)
        bound = math.sqrt(float(lam.sum())) * trunc_radius / scale
        model = SpectralModel(d, lam, q, bound, np.empty((d, d)), 0.0, sampler, trunc_radius, scale, identity)
        rng = seed_stream(moment_seed, 9)
        if moment_samples < 2:
            raise TypeMismatch("moment_samples must be at least 2")
        y2 = (model.sqrt_eigenvalues * draw_coordinates(model, rng, moment_samples)) ** 2
        model.fourth_moments = np.sqrt(y2.T @ y2 / float(moment_samples))
    else:
        raise TypeMismatch(f"unknown sampler {sampler!r}")

    model.phi = float(np.sum(model.fourth_moments[0] ** 2))
    return model
