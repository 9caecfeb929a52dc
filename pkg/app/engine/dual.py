# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Randomized gain of intensity controls and a coordinate search over a bounded family."""
# -------------------------------------------
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from app.dataclasses.paths import IntensityControl, PathBatch
from app.dataclasses.problem import ControlGrid, ProblemSpec, TimeGrid
from app.engine.forward import Measure, simulate_randomized_batch
from app.engine.randomizer import doleans_kappa_batch
from app.utils.rng import SeedLike, derive_seed
from app.utils.stats import mean_stderr
from app.utils.validation import ValidationError, require_positive_int

logger = logging.getLogger(__name__)

DEFAULT_LOWER = 0.05
DEFAULT_UPPER = 20.0
MULTIPLIERS = (0.25, 0.5, 2.0, 4.0)
MIN_PATHS = 100
GAIN_MODES = ("reweight", "direct")
# Reweighted candidates need this share of effective paths and a kappa mean within
# KAPPA_SIGMAS standard errors of one.
MIN_ESS_FRACTION = 0.05
KAPPA_SIGMAS = 4.0
CONFIRM_STREAM = 7


@dataclass(slots=True)
class GainEstimate:
    mean: float
    stderr: float
    ess: Optional[float] = None
    kappa_mean: Optional[float] = None
    kappa_stderr: Optional[float] = None

    def degenerate(self, paths: int) -> bool:
        """True when the reweighting collapsed onto a few paths or lost its unit mean."""
        if self.ess is None:
            return False
        if not np.isfinite(self.mean) or self.ess < MIN_ESS_FRACTION * paths:
            return True
        slack = max(KAPPA_SIGMAS * (self.kappa_stderr or 0.0), 1e-9)
        return abs(self.kappa_mean - 1.0) > slack


@dataclass(slots=True)
class IntensityFamily:
    """Multipliers theta[b, j] on ``blocks`` groups of consecutive steps, one per step by default.

    With ``link`` of shape ``(J, q)`` the intensity becomes
    theta[b, j] + <link[j], features>, clamped to [lower, upper].
    """

    tgrid: TimeGrid
    controls: int
    blocks: Optional[int] = None
    lower: float = DEFAULT_LOWER
    upper: float = DEFAULT_UPPER
    link: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.lower <= self.upper < np.inf:
            raise ValidationError(f"need 0 < lower <= upper < inf, got ({self.lower}, {self.upper})")
        if self.blocks is None:
            self.blocks = self.tgrid.steps
        self.blocks = min(require_positive_int("blocks", self.blocks), self.tgrid.steps)
        if self.link is not None:
            self.link = np.atleast_2d(np.asarray(self.link, dtype=float))
            if self.link.shape[0] != self.controls:
                raise ValidationError("link needs one row per control")

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocks, self.controls

    def initial(self) -> np.ndarray:
        return np.clip(np.ones(self.shape), self.lower, self.upper)

    def block_of(self, t) -> np.ndarray:
        step = self.tgrid.index_at(t)
        return np.minimum(step * self.blocks // self.tgrid.steps, self.blocks - 1)

    def control(self, theta: np.ndarray) -> IntensityControl:
        theta = np.clip(np.asarray(theta, dtype=float).reshape(self.shape), self.lower, self.upper)
        link = self.link

        def fn(t, features, marks, counts):
            size = np.shape(marks)[0]
            values = theta[self.block_of(np.broadcast_to(t, (size,)))]
            if link is not None and features.shape[1]:
                values = values + features @ link.T
            return values

        label = ",".join(f"{v:.3g}" for v in theta.ravel())
        return IntensityControl(fn=fn, lower=self.lower, upper=self.upper, name=f"theta[{label}]")

    def random(self, rng: np.random.Generator, spread: float = 4.0) -> np.ndarray:
        """Log-uniform multipliers in [1/spread, spread]."""
        draws = np.exp(rng.uniform(-np.log(spread), np.log(spread), size=self.shape))
        return np.clip(draws, self.lower, self.upper)


def reference_cache(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    paths: int,
    seed: SeedLike,
    workers: Optional[int] = None,
) -> PathBatch:
    """Paths under the Poisson reference law, reused across candidate intensities."""
    return simulate_randomized_batch(spec, grid, tgrid, paths, seed, Measure.reference(), workers=workers)


def reweighted_gain(batch: PathBatch, grid: ControlGrid, nu: IntensityControl) -> GainEstimate:
    kappa = doleans_kappa_batch(
        batch.jumps, grid, nu, batch.tgrid.horizon, batch.tgrid, batch.observation()
    )
    kappa = kappa[batch.valid]
    mean, stderr = mean_stderr(kappa * batch.gain[batch.valid])
    kappa_mean, kappa_stderr = mean_stderr(kappa)
    total = float(kappa.sum())
    ess = total**2 / float(np.sum(kappa**2)) if total > 0 else 0.0
    return GainEstimate(
        mean=mean, stderr=stderr, ess=ess, kappa_mean=kappa_mean, kappa_stderr=kappa_stderr
    )


def estimate_randomized_gain(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    nu: IntensityControl,
    paths: int,
    mode: str = "reweight",
    seed: SeedLike = 0,
    cache: Optional[PathBatch] = None,
    workers: Optional[int] = None,
) -> GainEstimate:
    """J^R(nu) = E^nu[int f dt + g] by kappa-reweighting Poisson paths or by thinning."""
    if paths < MIN_PATHS:
        raise ValidationError(f"at least {MIN_PATHS} paths are required, got {paths}")
    if mode == "reweight":
        batch = cache if cache is not None else reference_cache(spec, grid, tgrid, paths, seed, workers)
        return reweighted_gain(batch, grid, nu)
    if mode == "direct":
        batch = simulate_randomized_batch(
            spec, grid, tgrid, paths, seed, Measure.controlled(nu), workers=workers
        )
        mean, stderr = mean_stderr(batch.gain[batch.valid])
        return GainEstimate(mean=mean, stderr=stderr)
    raise ValidationError(f"unknown gain mode {mode!r}")


@dataclass(slots=True)
class SearchResult:
    """Best intensity of the search.

    ``gain`` and ``stderr`` come from a confirming run under the controlled
    law on fresh paths; ``screened_gain`` is the reweighted estimate that
    selected ``theta``.
    """

    theta: np.ndarray
    control: IntensityControl
    gain: float
    stderr: float
    evaluations: int
    screened_gain: float = float("nan")
    screened_stderr: float = float("nan")
    rejected: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)


def search_intensity(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    family: IntensityFamily,
    budget: int,
    seed: SeedLike,
    paths: int = 2000,
    workers: Optional[int] = None,
) -> SearchResult:
    """Coordinate ascent over theta with multipliers {1/4, 1/2, 2, 4}, common random numbers.

    ``budget`` counts reweighted gain evaluations, the starting point
    included. Candidates whose kappa weights degenerate are never accepted.
    """
    budget = require_positive_int("budget", budget)
    if family.controls != grid.size:
        raise ValidationError("intensity family and control grid sizes differ")
    paths = max(paths, MIN_PATHS)
    cache = reference_cache(spec, grid, tgrid, paths, seed, workers)
    history: list[dict[str, Any]] = []
    rejected = 0

    def evaluate(theta: np.ndarray, accepted: bool) -> GainEstimate:
        estimate = reweighted_gain(cache, grid, family.control(theta))
        row = {
            "evaluation": len(history),
            "gain": estimate.mean,
            "stderr": estimate.stderr,
            "ess": estimate.ess,
            "kappa_mean": estimate.kappa_mean,
        }
        for (b, j), value in np.ndenumerate(theta):
            row[f"theta_b{b}_j{j}"] = float(value)
        row["accepted"] = accepted
        history.append(row)
        logger.debug(f"candidate {len(history)}: gain {estimate.mean:.6g} (ess {estimate.ess:.0f})")
        return estimate

    theta = family.initial()
    best = evaluate(theta, True)
    used = 1
    improved = True
    while used < budget and improved:
        improved = False
        for b, j in np.ndindex(*family.shape):
            for factor in MULTIPLIERS:
                if used >= budget:
                    break
                candidate = theta.copy()
                candidate[b, j] = np.clip(theta[b, j] * factor, family.lower, family.upper)
                if candidate[b, j] == theta[b, j]:
                    continue
                estimate = evaluate(candidate, False)
                used += 1
                if estimate.degenerate(cache.size):
                    rejected += 1
                    continue
                if estimate.mean > best.mean:
                    theta, best = candidate, estimate
                    history[-1]["accepted"] = True
                    improved = True

    control = family.control(theta)
    confirmed = estimate_randomized_gain(
        spec,
        grid,
        tgrid,
        control,
        paths,
        mode="direct",
        seed=derive_seed(seed, CONFIRM_STREAM),
        workers=workers,
    )
    logger.info(
        f"Intensity search: screened gain {best.mean:.6g}, confirmed {confirmed.mean:.6g} "
        f"(stderr {confirmed.stderr:.3g}) after {used} evaluations, {rejected} degenerate"
    )
    return SearchResult(
        theta=theta,
        control=control,
        gain=confirmed.mean,
        stderr=confirmed.stderr,
        evaluations=used,
        screened_gain=best.mean,
        screened_stderr=best.stderr,
        rejected=rejected,
        history=history,
    )
