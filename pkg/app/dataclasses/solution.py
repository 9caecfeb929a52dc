# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Scenario batches, per-knot regression models and backward-scheme results."""
# -------------------------------------------
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from sklearn.preprocessing import PolynomialFeatures

from app.dataclasses.paths import JumpBatch, ObservationPath
from app.dataclasses.problem import ControlGrid, TimeGrid


@dataclass(slots=True)
class ScenarioBatch:
    """Filtered scenarios of the randomized system under the Poisson law.

    ``running[p, k, j]`` holds the unnormalized filter of the running gain at
    knot ``k`` for control ``j``; ``mass[p, k]`` the filter's total mass.
    """

    tgrid: TimeGrid
    grid: ControlGrid
    i_idx: np.ndarray
    features: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    mass: np.ndarray
    path_gain: np.ndarray
    observation: ObservationPath
    jumps: Optional[JumpBatch] = None
    feature_map: str = "moments"
    quant_k: int = 0

    @property
    def size(self) -> int:
        return int(self.i_idx.shape[0])

    def own_running(self) -> np.ndarray:
        """Running gain at each scenario's own mark, shape ``(P, N)``."""
        marks = self.i_idx[:, :-1]
        return np.take_along_axis(self.running, marks[..., None], axis=2)[..., 0]

    def filtered_gain(self) -> np.ndarray:
        return self.own_running() @ self.tgrid.dt + self.terminal

    def coverage(self) -> np.ndarray:
        """Scenario counts per knot and control, shape ``(N, J)``."""
        steps = self.tgrid.steps
        table = np.zeros((steps, self.grid.size), dtype=np.int64)
        for k in range(steps):
            table[k] = np.bincount(self.i_idx[:, k], minlength=self.grid.size)
        return table


@dataclass(slots=True)
class FeatureBasis:
    """Standardized polynomial features plus hinge terms ``(z - q)^+`` at quantile knots.

    Columns with no spread in the fitting sample are dropped; ``hinges[c]``
    holds the knots of kept column ``c``.
    """

    center: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    poly: Optional[PolynomialFeatures]
    hinges: list[np.ndarray] = field(default_factory=list)
    degree: int = 2

    @property
    def dim(self) -> int:
        if self.poly is None:
            return 1
        return int(self.poly.n_output_features_) + sum(h.size for h in self.hinges)

    def design(self, features: np.ndarray) -> np.ndarray:
        if self.poly is None:
            return np.ones((features.shape[0], 1))
        z = (features[:, self.keep] - self.center) / self.scale
        columns = [self.poly.transform(z)]
        for c, knots in enumerate(self.hinges):
            if knots.size:
                columns.append(np.maximum(z[:, c, None] - knots[None, :], 0.0))
        return np.hstack(columns)


@dataclass(slots=True)
class RegressionModel:
    """Least-squares fits of the continuation per control on a shared feature basis.

    ``coeffs`` has shape ``(folds, J, B)`` whether the fit was pooled across
    controls or run bucket by bucket; rows of unfitted buckets are NaN.
    """

    basis: FeatureBasis
    coeffs: np.ndarray
    bucket_sizes: np.ndarray
    residuals: np.ndarray
    regression: str = "joint"
    rank_deficient: bool = False

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def basis_dim(self) -> int:
        return int(self.coeffs.shape[2])

    @property
    def folds(self) -> int:
        return int(self.coeffs.shape[0])

    def design(self, features: np.ndarray) -> np.ndarray:
        return self.basis.design(features)

    def predict(self, features: np.ndarray, fold: Optional[int] = None) -> np.ndarray:
        """Fitted conditional expectations ``(P, J)``; folds averaged when ``fold`` is None."""
        basis = self.design(features)
        if fold is not None:
            return basis @ self.coeffs[fold].T
        return np.mean([basis @ c.T for c in self.coeffs], axis=0)


@dataclass(slots=True)
class BsdeSolution:
    y0: float
    stderr: float
    mode: str
    models: list[RegressionModel]
    values: np.ndarray
    coverage: np.ndarray
    residuals: np.ndarray
    knots: np.ndarray
    penalty_n: Optional[int] = None
    estimator: str = "crossfit"
    penalty_step: Optional[str] = None
    feature_map: str = "moments"
    quant_k: int = 0
    regression: str = "joint"
    replicates: int = 0
    rank_warnings: list[int] = field(default_factory=list)

    def to_dict(self, config_hash: Optional[str] = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "y0": float(self.y0),
            "stderr": float(self.stderr),
            "mode": self.mode,
            "estimator": self.estimator,
            "regression": self.regression,
            "bootstrap_replicates": int(self.replicates),
            "knots": self.knots.tolist(),
            "bucket_coverage": self.coverage.tolist(),
            "residuals": np.nan_to_num(self.residuals, nan=-1.0).tolist(),
            "rank_warnings": list(self.rank_warnings),
            "config_hash": config_hash,
        }
        if self.penalty_n is not None:
            out["n"] = int(self.penalty_n)
            out["penalty_step"] = self.penalty_step
        return out
