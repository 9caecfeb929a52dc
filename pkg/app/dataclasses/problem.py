# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Problem data: coefficient bundles, control grids and time grids.

Coefficient callables are batched. With ``P`` paths, ``x`` has shape
``(P, n)``, control values ``a`` have shape ``(P, q)`` and ``t`` is a float
or a ``(P,)`` array. Drift returns ``(P, n)``, the diffusions ``(P, n, m)``
and ``(P, n, d)``, gains ``(P,)``.
"""
# -------------------------------------------
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from app.utils.validation import ValidationError

Coefficient = Callable[..., np.ndarray]
InitSampler = Callable[[np.random.Generator, int], np.ndarray]


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, slots=True)
class GrowthBounds:
    """User-declared Lipschitz constant, growth constant and growth power."""

    lipschitz: float = 1.0
    growth: float = 1.0
    power: float = 2.0


@dataclass(frozen=True, slots=True)
class LikelihoodCoordinate:
    """State coordinate carrying the density Z with dZ = Z <theta, dW>.

    ``exponent(t, x, a)`` returns theta with shape ``(P, d)``.
    """

    index: int
    exponent: Coefficient


@dataclass(frozen=True, slots=True)
class ProblemSpec:
    name: str
    dim_x: int
    dim_v: int
    dim_w: int
    horizon: float
    drift: Coefficient
    diff_v: Coefficient
    diff_w: Coefficient
    running_gain: Coefficient
    terminal_gain: Callable[[np.ndarray], np.ndarray]
    init_sampler: InitSampler
    growth_bounds: GrowthBounds = field(default_factory=GrowthBounds)
    likelihood: Optional[LikelihoodCoordinate] = None
    feature_coords: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if self.dim_x < 1 or self.dim_v < 0 or self.dim_w < 0:
            raise ValidationError(
                f"invalid dimensions n={self.dim_x}, m={self.dim_v}, d={self.dim_w}"
            )
        if self.likelihood is not None and not 0 <= self.likelihood.index < self.dim_x:
            raise ValidationError("likelihood coordinate outside the state")

    @property
    def weighted(self) -> bool:
        return self.likelihood is not None

    @property
    def observed_coords(self) -> tuple[int, ...]:
        """Coordinates summarised by filter features."""
        if self.feature_coords is not None:
            return self.feature_coords
        skip = self.likelihood.index if self.likelihood is not None else -1
        return tuple(i for i in range(self.dim_x) if i != skip)


@dataclass(frozen=True, slots=True)
class ControlGrid:
    """Finite control set with intensity weights and the anchor a0."""

    points: np.ndarray
    weights: np.ndarray
    anchor_index: int = 0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.shape[0] < 1:
            raise ValidationError("control grid needs at least one point")
        if weights.shape[0] != points.shape[0]:
            raise ValidationError(
                f"{points.shape[0]} control points but {weights.shape[0]} weights"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValidationError("control weights must be positive and finite")
        if not 0 <= self.anchor_index < points.shape[0]:
            raise ValidationError(f"anchor index {self.anchor_index} out of range")
        object.__setattr__(self, "points", _frozen_array(points))
        object.__setattr__(self, "weights", _frozen_array(weights))

    @classmethod
    def from_values(
        cls,
        values: Sequence,
        weights: Optional[Sequence[float]] = None,
        anchor: Optional[int] = None,
    ) -> "ControlGrid":
        values = np.asarray(values, dtype=float)
        size = values.shape[0]
        weights = np.ones(size) if weights is None else weights
        return cls(points=values, weights=weights, anchor_index=anchor or 0)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total_mass

    @property
    def anchor(self) -> np.ndarray:
        return self.points[self.anchor_index]

    def with_total_mass(self, mass: float) -> "ControlGrid":
        """Same grid with weights rescaled so that their sum is ``mass``."""
        if not mass > 0:
            raise ValidationError(f"total mass must be positive, got {mass}")
        return replace(self, weights=self.weights * (mass / self.total_mass))

    def values(self, indices: np.ndarray) -> np.ndarray:
        return self.points[np.asarray(indices, dtype=np.int64)]

    def nearest_index(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float).reshape(-1, self.dim)
        gaps = np.abs(values[:, None, :] - self.points[None, :, :]).max(axis=2)
        return np.argmin(gaps, axis=1)

    def distance(self, i, j) -> np.ndarray:
        """Bounded metric rho(a_i, a_j) = |a_i - a_j| / (1 + |a_i - a_j|) < 1."""
        gap = np.abs(self.points[i] - self.points[j])
        gap = gap.max(axis=-1)
        return gap / (1.0 + gap)


@dataclass(frozen=True, slots=True)
class TimeGrid:
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        if knots.size < 2 or knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValidationError("time knots must start at 0 and increase strictly")
        object.__setattr__(self, "knots", _frozen_array(knots))

    @property
    def steps(self) -> int:
        return int(self.knots.size - 1)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)

    def index_at(self, t) -> np.ndarray:
        """Index k with t in [t_k, t_{k+1}); the last step also holds t = T."""
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(idx, 0, self.steps - 1)


@dataclass(frozen=True, slots=True)
class RawClassicalSpec:
    """Reference-probability data of the classical partially observed problem.

    Callables take ``(t, xbar, o, a)`` except ``obs_diff(t, o)`` and
    ``terminal_gain(xbar, o)``.
    """

    dim_x: int
    dim_v: int
    dim_obs: int
    horizon: float
    drift: Coefficient
    obs_drift: Coefficient
    diff_v: Coefficient
    diff_w: Coefficient
    obs_diff: Coefficient
    running_gain: Coefficient
    terminal_gain: Coefficient
    init_sampler: InitSampler
    kinv_h_bound: float
    obs_init: Optional[np.ndarray] = None
    growth_bounds: GrowthBounds = field(default_factory=GrowthBounds)
    name: str = "classical_po"


@dataclass(frozen=True, slots=True)
class RawLatentSpec:
    """Physical-probability data of the latent factor model.

    State callables take ``(t, xbar, m, o, a)``; factor callables ``(t, m)``;
    ``obs_drift(t, m, o)``; ``obs_diff(t, o)``; ``terminal_gain(xbar, m, o)``.
    ``init_sampler`` draws ``(xbar, m)`` jointly.
    """

    dim_x: int
    dim_factor: int
    dim_v: int
    dim_obs: int
    horizon: float
    drift: Coefficient
    diff_v: Coefficient
    diff_w: Coefficient
    factor_drift: Coefficient
    factor_diff_v: Coefficient
    factor_diff_w: Coefficient
    obs_drift: Coefficient
    obs_diff: Coefficient
    running_gain: Coefficient
    terminal_gain: Coefficient
    init_sampler: InitSampler
    kinv_h_bound: float
    obs_init: Optional[np.ndarray] = None
    growth_bounds: GrowthBounds = field(default_factory=GrowthBounds)
    name: str = "latent_factor"
