# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Monte Carlo summaries."""
# -------------------------------------------
import math

import numpy as np


def mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def combined_stderr(*errors: float) -> float:
    return math.sqrt(sum(e * e for e in errors))
