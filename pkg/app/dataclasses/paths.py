# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Jump records, intensity controls and simulated paths."""
# -------------------------------------------
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from app.dataclasses.problem import TimeGrid
from app.utils.validation import NumericError, ValidationError

# (t (P,), features (P, q), current mark (P,), jump count (P,)) -> (P, J)
IntensityFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(slots=True)
class JumpRecord:
    """One marked point path on (0, horizon]; marks are grid indices."""

    times: np.ndarray
    marks: np.ndarray
    initial_mark: int
    horizon: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.marks = np.asarray(self.marks, dtype=np.int64)
        if self.times.shape != self.marks.shape:
            raise ValidationError("jump times and marks differ in length")
        if self.times.size and (
            self.times[0] <= 0
            or self.times[-1] > self.horizon
            or np.any(np.diff(self.times) <= 0)
        ):
            raise ValidationError("jump times must increase strictly inside (0, T]")

    @property
    def count(self) -> int:
        return int(self.times.size)

    def mark_at(self, t: float) -> int:
        """I_t: mark of the last jump <= t, the initial mark before the first."""
        n = int(np.searchsorted(self.times, t, side="right"))
        return int(self.marks[n - 1]) if n else int(self.initial_mark)

    def count_at(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right"))


@dataclass(slots=True)
class JumpBatch:
    """Marked point paths padded to a common width (times +inf, marks -1)."""

    times: np.ndarray
    marks: np.ndarray
    initial_marks: np.ndarray
    horizon: float

    @property
    def size(self) -> int:
        return int(self.times.shape[0])

    @property
    def counts(self) -> np.ndarray:
        return np.sum(np.isfinite(self.times), axis=1)

    def counts_at(self, t) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=float), (self.size,))
        return np.sum(self.times <= t[:, None], axis=1)

    def marks_at(self, t) -> np.ndarray:
        """Vectorised I_t, one value per path (``t`` scalar or ``(P,)``)."""
        n = self.counts_at(t)
        if self.times.shape[1] == 0:
            return self.initial_marks.copy()
        last = np.take_along_axis(self.marks, np.maximum(n - 1, 0)[:, None], axis=1)[:, 0]
        return np.where(n > 0, last, self.initial_marks)

    def record(self, p: int) -> JumpRecord:
        keep = np.isfinite(self.times[p])
        return JumpRecord(
            times=self.times[p][keep],
            marks=self.marks[p][keep],
            initial_mark=int(self.initial_marks[p]),
            horizon=self.horizon,
        )

    @classmethod
    def from_records(cls, records: Sequence[JumpRecord]) -> "JumpBatch":
        width = max((r.count for r in records), default=0)
        times = np.full((len(records), width), np.inf)
        marks = np.full((len(records), width), -1, dtype=np.int64)
        for p, r in enumerate(records):
            times[p, : r.count] = r.times
            marks[p, : r.count] = r.marks
        initial = np.array([r.initial_mark for r in records], dtype=np.int64)
        horizon = records[0].horizon if records else 0.0
        return cls(times=times, marks=marks, initial_marks=initial, horizon=horizon)

    @staticmethod
    def concatenate(parts: Sequence["JumpBatch"]) -> "JumpBatch":
        width = max(part.times.shape[1] for part in parts)

        def pad(arr, fill):
            return np.pad(arr, ((0, 0), (0, width - arr.shape[1])), constant_values=fill)

        return JumpBatch(
            times=np.concatenate([pad(p.times, np.inf) for p in parts]),
            marks=np.concatenate([pad(p.marks, -1) for p in parts]),
            initial_marks=np.concatenate([p.initial_marks for p in parts]),
            horizon=parts[0].horizon,
        )


@dataclass(slots=True)
class ObservationPath:
    """Observation features known at the knots, held constant on [t_k, t_{k+1})."""

    tgrid: TimeGrid
    values: np.ndarray

    @classmethod
    def from_increments(cls, tgrid: TimeGrid, w_inc: np.ndarray) -> "ObservationPath":
        """Brownian values at the knots from step increments ``(P, N, d)``."""
        size, _, dim = w_inc.shape
        values = np.zeros((size, tgrid.steps + 1, dim))
        values[:, 1:, :] = np.cumsum(w_inc, axis=1)
        return cls(tgrid=tgrid, values=values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    def at(self, t) -> np.ndarray:
        size = self.values.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (size,))
        idx = np.searchsorted(self.tgrid.knots, t, side="right") - 1
        idx = np.clip(idx, 0, self.tgrid.steps)
        return self.values[np.arange(size), idx]

    def take(self, rows: np.ndarray) -> "ObservationPath":
        return ObservationPath(tgrid=self.tgrid, values=self.values[rows])


@dataclass(slots=True)
class IntensityControl:
    """Bounded intensity field nu_t(a_j) evaluated with clamping."""

    fn: IntensityFn
    lower: float
    upper: float
    name: str = "nu"

    def __post_init__(self):
        if not (0 < self.lower <= self.upper < np.inf):
            raise ValidationError(
                f"intensity bounds need 0 < lower <= upper < inf, got "
                f"({self.lower}, {self.upper})"
            )

    def evaluate(self, t, features, marks, counts) -> np.ndarray:
        raw = np.asarray(self.fn(t, features, marks, counts), dtype=float)
        if not np.all(np.isfinite(raw)):
            raise NumericError(f"intensity {self.name} returned non-finite values")
        return np.clip(raw, self.lower, self.upper)

    def floored(self, epsilon: float) -> "IntensityControl":
        """nu v epsilon, the truncation used to reach strictly positive controls."""
        return IntensityControl(
            fn=lambda t, f, m, c: np.maximum(self.fn(t, f, m, c), epsilon),
            lower=min(self.lower, epsilon),
            upper=self.upper,
            name=f"{self.name}|eps={epsilon:g}",
        )


@dataclass(frozen=True, slots=True)
class StepControl:
    """Piecewise-constant control: ``indices[i]`` on [switch_{i}, switch_{i+1})."""

    switch_times: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.switch_times, dtype=float).ravel()
        indices = np.asarray(self.indices, dtype=np.int64).ravel()
        if indices.size != times.size + 1:
            raise ValidationError("a step control needs one more value than switch times")
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValidationError("switch times must be positive and strictly increasing")
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "indices", indices)

    @property
    def initial_index(self) -> int:
        return int(self.indices[0])

    def index_at(self, t) -> np.ndarray:
        return self.indices[np.searchsorted(self.switch_times, t, side="right")]


@dataclass(slots=True)
class MarkedPath:
    grid: TimeGrid
    x: np.ndarray
    i_idx: np.ndarray
    w_inc: np.ndarray
    v_inc: np.ndarray
    jumps: JumpRecord
    kappa_T: float = 1.0
    gain: float = 0.0
    valid: bool = True
    first_bad_time: Optional[float] = None


@dataclass(slots=True)
class PathBatch:
    """Euler paths of the randomized pair (X, I) for ``P`` scenarios."""

    tgrid: TimeGrid
    x: np.ndarray
    i_idx: np.ndarray
    w_inc: np.ndarray
    v_inc: np.ndarray
    jumps: JumpBatch
    kappa_T: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    valid: np.ndarray
    first_bad_time: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    @property
    def gain(self) -> np.ndarray:
        return self.running + self.terminal

    def observation(self) -> ObservationPath:
        return ObservationPath.from_increments(self.tgrid, self.w_inc)

    def path(self, p: int) -> MarkedPath:
        bad = self.first_bad_time[p]
        return MarkedPath(
            grid=self.tgrid,
            x=self.x[p],
            i_idx=self.i_idx[p],
            w_inc=self.w_inc[p],
            v_inc=self.v_inc[p],
            jumps=self.jumps.record(p),
            kappa_T=float(self.kappa_T[p]),
            gain=float(self.gain[p]),
            valid=bool(self.valid[p]),
            first_bad_time=None if np.isnan(bad) else float(bad),
        )

    @staticmethod
    def concatenate(parts: Sequence["PathBatch"]) -> "PathBatch":
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return PathBatch(
            tgrid=parts[0].tgrid,
            x=cat("x"),
            i_idx=cat("i_idx"),
            w_inc=cat("w_inc"),
            v_inc=cat("v_inc"),
            jumps=JumpBatch.concatenate([p.jumps for p in parts]),
            kappa_T=cat("kappa_T"),
            running=cat("running"),
            terminal=cat("terminal"),
            valid=cat("valid"),
            first_bad_time=cat("first_bad_time"),
        )
