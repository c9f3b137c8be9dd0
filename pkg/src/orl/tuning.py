"""Constants from the regret analysis: learning rate, forgetting factor, expert term."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .core import DimensionError


class ForgettingFactorClampWarning(UserWarning):
    """The forgetting-factor schedule fell below the configured floor."""


@dataclass(frozen=True)
class TuningInputs:
    D_r: float
    D: float
    T: int
    V_T: float = 0.0
    N: int = 1

    def __post_init__(self) -> None:
        if not self.D_r > 0:
            raise ValueError(f"D_r must be positive, got {self.D_r}")
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.V_T < 0:
            raise ValueError(f"V_T must be nonnegative, got {self.V_T}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")


def _check_bounds(D_r: float, D: float) -> None:
    if not D_r > 0:
        raise ValueError(f"D_r must be positive, got {D_r}")
    if not D >= 0:
        raise ValueError(f"D must be nonnegative, got {D}")


def lambda_max(D_r: float, D: float) -> float:
    """Largest expert learning rate covered by the regret guarantee."""
    _check_bounds(D_r, D)
    return 1.0 / (4.0 * (D_r**2 + D**2 * D_r**2))


def exp_concavity_alpha(D_r: float, D: float) -> float:
    """Exp-concavity constant of the squared loss on the bounded residual domain.

    The loss ``||e - e_hat||^2`` is at most ``C = 2 D_r^2 + 2 D^2 D_r^2`` there,
    and the squared loss restricted to a ball of squared radius ``C`` is
    ``1 / (2C)``-exp-concave.
    """
    _check_bounds(D_r, D)
    C = 2.0 * D_r**2 + 2.0 * D**2 * D_r**2
    return 1.0 / (2.0 * C)


def forgetting_factor(V_T: float, T: int, D: float, min_gamma: float | None = 0.05) -> float:
    """Forgetting factor trading static against dynamic regret.

    ``gamma = 1 - 0.5 * sqrt(max(V_T, ln(T)^2 / T) / (2 D T))``.

    Args:
        V_T: path-length budget of the comparator class.
        T: horizon.
        D: spectral-norm bound of the predictor set.
        min_gamma: floor applied (with a warning) when the formula drops
            below it. ``None`` disables clamping; a nonpositive result then
            raises ``ValueError``.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    if V_T < 0:
        raise ValueError(f"V_T must be nonnegative, got {V_T}")
    budget = max(V_T, math.log(T) ** 2 / T)
    gamma = 1.0 - 0.5 * math.sqrt(budget / (2.0 * D * T))
    if min_gamma is not None and gamma < min_gamma:
        warnings.warn(
            f"forgetting factor {gamma:.6g} from V_T={V_T}, T={T}, D={D} clamped to {min_gamma}",
            ForgettingFactorClampWarning,
            stacklevel=2,
        )
        return float(min_gamma)
    if gamma <= 0:
        raise ValueError(
            f"forgetting factor schedule gives gamma={gamma:.6g} <= 0 for V_T={V_T}, T={T}, D={D}; "
            "the path-length budget is too large for this horizon"
        )
    return gamma


def expert_regret_term(N: int, alpha: float) -> float:
    """Additive regret ``ln(N) / alpha`` of exponential weights over ``N`` experts."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return math.log(N) / alpha


def path_length(comparators: Sequence[ArrayLike], k: int = 1) -> float:
    """Total Frobenius variation ``sum_t ||M_{t+k} - M_t||_F``.

    ``k = 1`` is the ordinary path length; larger ``k`` sums the stride-k
    differences used for k-step-ahead comparators.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    mats = [np.atleast_2d(np.asarray(M, dtype=np.float64)) for M in comparators]
    if not mats:
        raise ValueError("path_length needs at least one comparator")
    shape = mats[0].shape
    for M in mats:
        if M.shape != shape:
            raise DimensionError(f"comparator shapes differ: {shape} vs {M.shape}")
    total = 0.0
    for a, b in zip(mats[:-k], mats[k:]):
        total += float(np.linalg.norm(b - a))
    return total
