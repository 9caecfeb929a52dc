# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Particle approximation of the randomized filter.

Particles share the observed increment dW of their scenario and draw the
unobserved increment dV independently. Problems carrying a likelihood
coordinate run in weighted mode: weights proportional to Z, resampling when
the effective sample size drops under M/2, resampled particles restarting
from the cloud's mass so that particle averages keep estimating the
unnormalized filter.
"""
# -------------------------------------------
import logging
import warnings
from typing import Callable, Optional

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from app.dataclasses.filtering import CloudBatch, FilterCloud, FilterFeatures
from app.dataclasses.problem import ControlGrid, ProblemSpec
from app.engine.forward import euler_step
from app.utils.rng import SeedLike, make_rng, open_uniforms, standard_normals
from app.utils.validation import FilterCollapseError, NumericError, ValidationError

logger = logging.getLogger(__name__)

RESAMPLERS = ("multinomial", "systematic", "none")
FEATURE_MAPS = ("moments", "quantized")
LLOYD_ITERATIONS = 10


def init_clouds(spec: ProblemSpec, count: int, particles: int, rng: np.random.Generator) -> CloudBatch:
    """``count`` clouds of ``particles`` draws from the initial law, equal weights."""
    if particles < 1:
        raise ValidationError(f"particles must be >= 1, got {particles}")
    x = np.asarray(spec.init_sampler(rng, count * particles), dtype=float)
    return CloudBatch(
        particles=x.reshape(count, particles, spec.dim_x),
        weights=np.full((count, particles), 1.0 / particles),
        time_index=0,
    )


def resample_indices(weights: np.ndarray, rng: np.random.Generator, scheme: str) -> np.ndarray:
    """Ancestor indices ``(R, M)`` for weight rows ``(R, M)``."""
    rows, size = weights.shape
    out = np.empty((rows, size), dtype=np.int64)
    for r in range(rows):
        cum = np.cumsum(weights[r])
        cum[-1] = 1.0
        if scheme == "systematic":
            u = (open_uniforms(rng, 1) + np.arange(size)) / size
        else:
            u = np.sort(open_uniforms(rng, size))
        out[r] = np.minimum(np.searchsorted(cum, u, side="left"), size - 1)
    return out


def _reweight(spec: ProblemSpec, particles: np.ndarray, rng, scheme: str):
    zi = spec.likelihood.index
    size = particles.shape[1]
    z = particles[..., zi]
    total = z.sum(axis=1)
    if np.any(~np.isfinite(total) | (total <= 0)) or np.any(z < 0):
        raise FilterCollapseError("particle weights vanished or became non-finite")
    weights = z / total[:, None]
    ess = 1.0 / np.sum(weights**2, axis=1)
    low = ess < size / 2
    if scheme != "none" and low.any():
        ancestors = resample_indices(weights[low], rng, scheme)
        moved = np.take_along_axis(particles[low], ancestors[..., None], axis=1)
        moved[..., zi] = (total[low] / size)[:, None]
        particles[low] = moved
        weights[low] = 1.0 / size
    return weights, particles


def propagate_clouds(
    spec: ProblemSpec,
    clouds: CloudBatch,
    dw: np.ndarray,
    marks: np.ndarray,
    t: float,
    dt: float,
    rng: np.random.Generator,
    resample: str = "multinomial",
) -> CloudBatch:
    """Advance every cloud one step with its scenario's shared dW and mark value."""
    if resample not in RESAMPLERS:
        raise ValidationError(f"unknown resampling scheme {resample!r}")
    count, size, n = clouds.particles.shape
    x = clouds.particles.reshape(count * size, n)
    a = np.repeat(np.atleast_2d(marks), size, axis=0)
    shared = np.repeat(np.asarray(dw, dtype=float).reshape(count, spec.dim_w), size, axis=0)
    dv = standard_normals(rng, (count * size, spec.dim_v)) * np.sqrt(dt)
    x = euler_step(spec, t, x, a, dt, shared, dv).reshape(count, size, n)
    weights = clouds.weights
    if spec.weighted:
        weights, x = _reweight(spec, x, rng, resample)
    return CloudBatch(particles=x, weights=weights, time_index=clouds.time_index + 1)


def propagate_filter(
    spec: ProblemSpec,
    cloud: FilterCloud,
    shared_w: np.ndarray,
    mark: np.ndarray,
    dt: float,
    seed: SeedLike,
    t: Optional[float] = None,
    resample: str = "multinomial",
) -> FilterCloud:
    t = cloud.time_index * dt if t is None else t
    batch = propagate_clouds(
        spec,
        CloudBatch.from_cloud(cloud),
        np.asarray(shared_w, dtype=float)[None],
        np.asarray(mark, dtype=float).reshape(1, -1),
        t,
        dt,
        make_rng(seed),
        resample,
    )
    return batch.cloud(0)


def filter_expectation(cloud: FilterCloud, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    values = np.asarray(phi(cloud.particles), dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericError("test function returned non-finite values")
    return float(cloud.weights @ values)


def unnormalized_expectation(cloud: FilterCloud, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """Particle average; estimates the unnormalized filter of Z-multiplicative ``phi``."""
    values = np.asarray(phi(cloud.particles), dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericError("test function returned non-finite values")
    return float(values.mean())


def _physical(spec: ProblemSpec, particles: np.ndarray, values: np.ndarray) -> np.ndarray:
    if spec.likelihood is None:
        return values
    z = particles[..., spec.likelihood.index]
    return np.where(z > 0, values / np.where(z > 0, z, 1.0), 0.0)


def extract_features(
    cloud: FilterCloud, spec: ProblemSpec, include_terminal: bool = False
) -> FilterFeatures:
    """Weighted mean and covariance of the observed coordinates, optionally the filtered g."""
    coords = list(spec.observed_coords)
    p = cloud.particles[:, coords]
    mean = cloud.weights @ p
    centered = p - mean
    cov = (cloud.weights[:, None] * centered).T @ centered
    cov[np.diag_indices_from(cov)] = np.maximum(np.diag(cov), 0.0)
    extra = {}
    if include_terminal:
        g = _physical(spec, cloud.particles, spec.terminal_gain(cloud.particles))
        extra["terminal"] = float(cloud.weights @ g)
    return FilterFeatures(mean=mean, cov_upper=cov[np.triu_indices(len(coords))], extra=extra)


def moment_features(clouds: CloudBatch, spec: ProblemSpec) -> np.ndarray:
    coords = list(spec.observed_coords)
    p = clouds.particles[:, :, coords]
    w = clouds.weights
    mean = np.einsum("cm,cmi->ci", w, p)
    centered = p - mean[:, None, :]
    cov = np.einsum("cm,cmi,cmj->cij", w, centered, centered)
    rows, cols = np.triu_indices(len(coords))
    upper = cov[:, rows, cols]
    upper[:, rows == cols] = np.maximum(upper[:, rows == cols], 0.0)
    return np.concatenate([mean, upper], axis=1)


def quantized_features(clouds: CloudBatch, spec: ProblemSpec, k: int, seed: int = 0) -> np.ndarray:
    """K-point quantization of each cloud: sorted centres and their weights."""
    coords = list(spec.observed_coords)
    clusters = min(k, clouds.size)
    out = np.empty((clouds.count, clusters * (len(coords) + 1)))
    for c in range(clouds.count):
        points = clouds.particles[c][:, coords]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            fit = KMeans(
                n_clusters=clusters, max_iter=LLOYD_ITERATIONS, n_init=1, random_state=seed
            ).fit(points, sample_weight=clouds.weights[c])
        mass = np.bincount(fit.labels_, weights=clouds.weights[c], minlength=clusters)
        order = np.lexsort(fit.cluster_centers_.T[::-1])
        out[c] = np.concatenate([fit.cluster_centers_[order].ravel(), mass[order]])
    return out


def cloud_features(
    clouds: CloudBatch,
    spec: ProblemSpec,
    feature_map: str = "moments",
    quant_k: int = 4,
    seed: int = 0,
) -> np.ndarray:
    if feature_map == "moments":
        return moment_features(clouds, spec)
    if feature_map == "quantized":
        return quantized_features(clouds, spec, quant_k, seed)
    raise ValidationError(f"unknown feature map {feature_map!r}")


def cloud_mass(clouds: CloudBatch, spec: ProblemSpec) -> np.ndarray:
    """Total mass of the unnormalized filter (mean Z), ones without a likelihood."""
    if spec.likelihood is None:
        return np.ones(clouds.count)
    return clouds.particles[..., spec.likelihood.index].mean(axis=1)


def running_by_control(clouds: CloudBatch, spec: ProblemSpec, grid: ControlGrid, t: float) -> np.ndarray:
    """Unnormalized filter of f(t, ., a_j) for every grid control, shape ``(C, J)``."""
    count, size, n = clouds.particles.shape
    x = clouds.particles.reshape(count * size, n)
    out = np.empty((count, grid.size))
    for j in range(grid.size):
        a = np.repeat(grid.points[j : j + 1], count * size, axis=0)
        out[:, j] = spec.running_gain(t, x, a).reshape(count, size).mean(axis=1)
    return out


def terminal_by_cloud(clouds: CloudBatch, spec: ProblemSpec) -> np.ndarray:
    count, size, n = clouds.particles.shape
    g = spec.terminal_gain(clouds.particles.reshape(count * size, n))
    return g.reshape(count, size).mean(axis=1)
