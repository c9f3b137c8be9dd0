"""Domain types and residual algebra shared by the learners and the harness.

States, residuals and regressors are plain float64 numpy vectors. Only the
containers that carry indexing rules (trajectories with negative start times,
offline prediction grids) get their own classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]


class DimensionError(ValueError):
    """Raised when two vectors that must share a dimension do not."""


def as_state(values: ArrayLike) -> FloatArray:
    """Coerce ``values`` to a finite 1-D float64 vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D state vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state contains non-finite entries")
    return arr


def _check_same_dim(a: FloatArray, b: FloatArray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


@dataclass(frozen=True)
class Trajectory:
    """Target states at contiguous integer times.

    ``states[j]`` is the state at time ``start_time + j``. Initial conditions
    live at negative times; the first online step is ``t = 0``.
    """

    start_time: int
    states: FloatArray

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] == 0:
            raise DimensionError("trajectory states must be a non-empty (L, n) array")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite entries")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "start_time", int(self.start_time))

    @property
    def n(self) -> int:
        return int(self.states.shape[1])

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start_time, self.end_time + 1)

    def __len__(self) -> int:
        return len(self.states)

    def has(self, t: int) -> bool:
        return self.start_time <= t <= self.end_time

    def at(self, t: int) -> FloatArray:
        if not self.has(t):
            raise IndexError(f"time {t} outside trajectory [{self.start_time}, {self.end_time}]")
        return self.states[t - self.start_time]

    def window(self, t_first: int, t_last: int) -> FloatArray:
        """States for ``t_first..t_last`` inclusive as an (m, n) array."""
        if not (self.has(t_first) and self.has(t_last)):
            raise IndexError(f"window [{t_first}, {t_last}] outside trajectory")
        return self.states[t_first - self.start_time : t_last - self.start_time + 1]


@dataclass(frozen=True)
class OfflinePredictionSet:
    """Precomputed predictions of ``N`` experts for every time in ``[0, T]``.

    ``predictions`` has shape ``(N, T + 1, n)``; expert ``i`` (0-based here,
    1-based in files) predicts ``predictions[i, t]`` for time ``t``.
    """

    predictions: FloatArray

    def __post_init__(self) -> None:
        preds = np.asarray(self.predictions, dtype=np.float64)
        if preds.ndim != 3 or preds.shape[0] < 1 or preds.shape[1] < 1:
            raise DimensionError("offline predictions must be an (N, T+1, n) array")
        if not np.all(np.isfinite(preds)):
            raise ValueError("offline predictions contain non-finite entries")
        object.__setattr__(self, "predictions", preds)

    @property
    def N(self) -> int:
        return int(self.predictions.shape[0])

    @property
    def T(self) -> int:
        return int(self.predictions.shape[1] - 1)

    @property
    def n(self) -> int:
        return int(self.predictions.shape[2])

    def column(self, i: int) -> FloatArray:
        return self.predictions[i]


def residual(r: ArrayLike, r_off: ArrayLike) -> FloatArray:
    """Residual error ``r - r_off`` of an offline prediction."""
    r = np.asarray(r, dtype=np.float64)
    r_off = np.asarray(r_off, dtype=np.float64)
    _check_same_dim(r, r_off)
    return r - r_off


def stack_regressors(history: Sequence[ArrayLike], p: int, n: int | None = None) -> FloatArray:
    """Stack the ``p`` most recent residuals, oldest block first.

    ``history`` is ordered oldest to newest and ends at the current time.
    When fewer than ``p`` residuals exist the missing (older) blocks are zero.

    Args:
        history: residual vectors, oldest first.
        p: number of blocks in the regressor.
        n: state dimension; required only when ``history`` is empty.

    Returns:
        Vector of length ``n * p``.
    """
    if p < 1:
        raise ValueError(f"regressor memory p must be >= 1, got {p}")
    recent = [np.asarray(e, dtype=np.float64) for e in list(history)[-p:]]
    if recent:
        dim = recent[0].shape[0]
        if n is not None and n != dim:
            raise DimensionError(f"dimension mismatch: {dim} vs {n}")
        for e in recent:
            _check_same_dim(e, recent[0])
    elif n is None:
        raise ValueError("n is required when the history is empty")
    else:
        dim = n
    z = np.zeros(dim * p)
    offset = (p - len(recent)) * dim
    for j, e in enumerate(recent):
        z[offset + j * dim : offset + (j + 1) * dim] = e
    return z


def corrected_prediction(e_hat: ArrayLike, r_off_future: ArrayLike) -> FloatArray:
    """Offline prediction shifted by the predicted residual."""
    e_hat = np.asarray(e_hat, dtype=np.float64)
    r_off_future = np.asarray(r_off_future, dtype=np.float64)
    _check_same_dim(e_hat, r_off_future)
    return e_hat + r_off_future


def squared_loss(r: ArrayLike, r_hat: ArrayLike) -> float:
    """Squared Euclidean prediction error ``||r - r_hat||^2``."""
    r = np.asarray(r, dtype=np.float64)
    r_hat = np.asarray(r_hat, dtype=np.float64)
    _check_same_dim(r, r_hat)
    d = r - r_hat
    return float(d @ d)


class ResidualBoundWarning(UserWarning):
    """A residual exceeded the configured bound ``D_r``."""


def exceeds_residual_bound(e: FloatArray, D_r: float | None) -> bool:
    """True when ``||e|| > D_r``; callers decide whether to warn."""
    if D_r is None:
        return False
    return float(np.sqrt(e @ e)) > D_r
