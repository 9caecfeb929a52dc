# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Particle clouds approximating the randomized filter and their summaries."""
# -------------------------------------------
from dataclasses import dataclass, field

import numpy as np

from app.utils.validation import ValidationError

WEIGHT_TOLERANCE = 1e-12


@dataclass(slots=True)
class FilterCloud:
    """Particles ``(M, n)`` with normalized weights ``(M,)`` at knot ``time_index``."""

    particles: np.ndarray
    weights: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.particles.shape[0] < 1:
            raise ValidationError("a filter cloud needs at least one particle")
        if self.weights.shape[0] != self.particles.shape[0]:
            raise ValidationError("one weight per particle is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationError("filter weights must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, particles: np.ndarray, time_index: int = 0) -> "FilterCloud":
        particles = np.atleast_2d(particles)
        size = particles.shape[0]
        return cls(particles=particles, weights=np.full(size, 1.0 / size), time_index=time_index)

    @property
    def size(self) -> int:
        return int(self.particles.shape[0])

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


@dataclass(slots=True)
class CloudBatch:
    """``C`` independent clouds stacked as particles ``(C, M, n)``, weights ``(C, M)``."""

    particles: np.ndarray
    weights: np.ndarray
    time_index: int = 0

    @property
    def count(self) -> int:
        return int(self.particles.shape[0])

    @property
    def size(self) -> int:
        return int(self.particles.shape[1])

    def cloud(self, c: int) -> FilterCloud:
        weights = self.weights[c] / self.weights[c].sum()
        return FilterCloud(particles=self.particles[c], weights=weights, time_index=self.time_index)

    @classmethod
    def from_cloud(cls, cloud: FilterCloud) -> "CloudBatch":
        return cls(
            particles=cloud.particles[None].copy(),
            weights=cloud.weights[None].copy(),
            time_index=cloud.time_index,
        )


@dataclass(slots=True)
class FilterFeatures:
    mean: np.ndarray
    cov_upper: np.ndarray
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov_upper = np.asarray(self.cov_upper, dtype=float).ravel()

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def covariance(self) -> np.ndarray:
        n = self.dim
        cov = np.zeros((n, n))
        rows, cols = np.triu_indices(n)
        cov[rows, cols] = self.cov_upper
        cov[cols, rows] = self.cov_upper
        return cov

    def vector(self) -> np.ndarray:
        extra = np.array([self.extra[key] for key in sorted(self.extra)], dtype=float)
        return np.concatenate([self.mean, self.cov_upper, extra])
