"""Projected recursive least squares with forgetting, plus the k-step bank.

One learner fits a matrix ``M`` (n x np) mapping a stacked regressor ``z`` to
the next residual. Each update minimizes the discounted, ridge-regularized
squared error and then projects onto the spectral-norm ball ``||M|| <= D``
in the metric induced by the precision matrix ``P``.

For k-step-ahead prediction with delayed feedback a bank keeps ``k``
independent learners; learner ``t mod k`` is the only one touched at time t.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg.lapack import dposv

from .core import DimensionError, FloatArray

PROJECTION_METHODS = ("exact", "scale")


def spectral_norm(M: FloatArray) -> float:
    """Largest singular value of ``M``."""
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _within_ball(M: FloatArray, D: float) -> bool:
    # The Frobenius norm bounds the spectral norm, so the SVD is only needed
    # when the cheap bound is inconclusive.
    flat = M.ravel()
    if flat @ flat <= D * D:
        return True
    return spectral_norm(M) <= D


def clip_singular_values(M: FloatArray, D: float) -> FloatArray:
    """Frobenius-nearest matrix with spectral norm at most ``D``."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U * np.minimum(s, D)) @ Vt


def weighted_distance(M: FloatArray, M_star: FloatArray, P: FloatArray) -> float:
    """``||M - M_star||_{F,P} = sqrt(tr((M - M_star) P (M - M_star)^T))``."""
    d = M - M_star
    return float(np.sqrt(max(np.sum((d @ P) * d), 0.0)))


def _is_scaled_identity(P: FloatArray, rtol: float = 1e-12) -> bool:
    c = np.trace(P) / P.shape[0]
    return bool(np.linalg.norm(P - c * np.eye(P.shape[0])) <= rtol * max(abs(c), 1e-300) * P.shape[0])


def project(
    M_star: ArrayLike,
    P: ArrayLike,
    D: float,
    method: str = "exact",
    tol: float = 1e-10,
    max_iter: int = 500,
) -> FloatArray:
    """Project ``M_star`` onto ``{M : ||M|| <= D}`` in the ``P``-weighted Frobenius norm.

    Feasible inputs are returned unchanged. With ``P`` proportional to the
    identity the answer is exact singular-value clipping. Otherwise projected
    gradient descent runs on ``0.5 * ||M - M_star||_{F,P}^2`` with step
    ``1 / lambda_max(P)``, starting from the radially scaled point; the
    iteration is monotone, so the result is never farther than that start.

    ``method="scale"`` skips the iteration and returns ``M_star * D / ||M_star||``.
    This is feasible but only approximately nearest.
    """
    M_star = np.asarray(M_star, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if method not in PROJECTION_METHODS:
        raise ValueError(f"unknown projection method {method!r}; expected one of {PROJECTION_METHODS}")
    if _within_ball(M_star, D):
        return M_star
    if D <= 0:
        return np.zeros_like(M_star)

    norm = spectral_norm(M_star)
    scaled = M_star * (D / norm)
    if method == "scale":
        return scaled
    if P.shape[0] == 1 or _is_scaled_identity(P):
        return clip_singular_values(M_star, D)

    step = 1.0 / float(np.linalg.eigvalsh(P)[-1])
    M = clip_singular_values(scaled, D)
    d = M - M_star
    f = 0.5 * float(np.sum((d @ P) * d))
    for _ in range(max_iter):
        grad = d @ P
        candidate = clip_singular_values(M - step * grad, D)
        d_new = candidate - M_star
        f_new = 0.5 * float(np.sum((d_new @ P) * d_new))
        if f_new > f:
            break
        improvement = f - f_new
        M, d, f = candidate, d_new, f_new
        if improvement < tol * max(1.0, f):
            break
    return M


@dataclass
class RlsLearner:
    """State of one projected RLS learner.

    Attributes:
        M_hat: current predictor, shape (n, n*p).
        P: discounted regressor Gram matrix plus decayed ridge term.
        gamma: forgetting factor in (0, 1].
        epsilon: ridge multiplier for the initial ``P = epsilon * I``.
        D: spectral-norm bound on ``M_hat``.
        steps_seen: number of updates applied.
        projection: ``"exact"`` or the approximate ``"scale"`` fallback.
    """

    M_hat: FloatArray
    P: FloatArray
    gamma: float
    epsilon: float
    D: float
    steps_seen: int = 0
    projection: str = "exact"

    @property
    def n(self) -> int:
        return int(self.M_hat.shape[0])

    @property
    def np_dim(self) -> int:
        return int(self.M_hat.shape[1])

    def predict(self, z: FloatArray) -> FloatArray:
        if z.shape[0] != self.M_hat.shape[1]:
            raise DimensionError(f"regressor length {z.shape} does not match {self.np_dim}")
        return self.M_hat @ z

    def update(self, e: FloatArray, z: FloatArray) -> None:
        """In-place update with residual ``e`` and the regressor that predicted it."""
        if z.shape[0] != self.M_hat.shape[1] or e.shape[0] != self.M_hat.shape[0]:
            raise DimensionError(
                f"update shapes e={e.shape}, z={z.shape} do not match learner ({self.n}, {self.np_dim})"
            )
        P = self.gamma * self.P + z[:, None] * z
        # Cholesky solve for P^{-1} z. The decayed ridge term gamma^t * epsilon can
        # underflow on long runs without excitation; fall back to the minimum-norm
        # least-squares gain then.
        _, gain, info = dposv(P, z)
        if info != 0:
            gain = np.linalg.lstsq(P, z, rcond=None)[0]
        innovation = e - self.M_hat @ z
        M_star = self.M_hat + innovation[:, None] * gain
        self.P = P
        self.M_hat = project(M_star, P, self.D, self.projection)
        self.steps_seen += 1


def rls_init(
    n: int,
    p: int,
    gamma: float,
    epsilon: float = 1.0,
    D: float = 5.0,
    M0: ArrayLike | None = None,
    projection: str = "exact",
) -> RlsLearner:
    """Fresh learner with ``P = epsilon * I`` and ``M_hat = M0`` (zero by default)."""
    if n < 1 or p < 1:
        raise ValueError(f"n and p must be >= 1, got n={n}, p={p}")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1], got {gamma}")
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not D >= 0.0:
        raise ValueError(f"D must be nonnegative, got {D}")
    if projection not in PROJECTION_METHODS:
        raise ValueError(f"unknown projection method {projection!r}")
    if M0 is None:
        M = np.zeros((n, n * p))
    else:
        M = np.array(M0, dtype=np.float64)
        if M.shape != (n, n * p):
            raise DimensionError(f"M0 must have shape {(n, n * p)}, got {M.shape}")
        if spectral_norm(M) > D:
            raise ValueError(f"M0 has spectral norm {spectral_norm(M):.6g} > D={D}")
    return RlsLearner(
        M_hat=M,
        P=epsilon * np.eye(n * p),
        gamma=float(gamma),
        epsilon=float(epsilon),
        D=float(D),
        projection=projection,
    )


def rls_predict(learner: RlsLearner, z: ArrayLike) -> FloatArray:
    """Predicted residual ``M_hat @ z``."""
    return learner.predict(np.asarray(z, dtype=np.float64))


def rls_update(learner: RlsLearner, e: ArrayLike, z_used: ArrayLike) -> RlsLearner:
    """Return an updated copy of ``learner``; the input is left untouched."""
    new = copy.deepcopy(learner)
    new.update(np.asarray(e, dtype=np.float64), np.asarray(z_used, dtype=np.float64))
    return new


@dataclass
class KStepLearnerBank:
    """``k`` independent learners; learner ``j`` only sees times ``t = j mod k``."""

    k: int
    learners: list[RlsLearner]
    last_t: int | None = None
    update_counts: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.learners) != self.k:
            raise ValueError(f"bank needs exactly k={self.k} learners, got {len(self.learners)}")
        if not self.update_counts:
            self.update_counts = [0] * self.k

    def learner_for(self, t: int) -> RlsLearner:
        return self.learners[t % self.k]

    def predict(self, t: int, z_t: FloatArray) -> FloatArray:
        """Prediction for time ``t + k`` from learner ``t mod k`` without updating."""
        return self.learner_for(t).predict(z_t)


def bank_init(
    k: int,
    n: int,
    p: int,
    gamma: float,
    epsilon: float = 1.0,
    D: float = 5.0,
    M0: ArrayLike | None = None,
    projection: str = "exact",
) -> KStepLearnerBank:
    if k < 1:
        raise ValueError(f"prediction horizon k must be >= 1, got {k}")
    learners = [rls_init(n, p, gamma, epsilon, D, M0, projection) for _ in range(k)]
    return KStepLearnerBank(k=k, learners=learners)


def bank_step(
    bank: KStepLearnerBank,
    t: int,
    e_t: ArrayLike,
    z_t_minus_k: ArrayLike,
    z_t: ArrayLike,
) -> tuple[FloatArray, KStepLearnerBank]:
    """Feed back the residual at time ``t`` and predict the residual at ``t + k``.

    Learner ``j = t mod k`` made the prediction now being scored (from
    ``z_{t-k}``); it is updated with ``(e_t, z_{t-k})`` and then predicts from
    ``z_t``. The bank is modified in place and returned for convenience.
    """
    if t < bank.k:
        raise ValueError(f"feedback for t={t} is not available before t >= k={bank.k}")
    if bank.last_t is not None and t <= bank.last_t:
        raise ValueError(f"bank_step called with t={t} after t={bank.last_t}")
    j = t % bank.k
    learner = bank.learners[j]
    learner.update(np.asarray(e_t, dtype=np.float64), np.asarray(z_t_minus_k, dtype=np.float64))
    bank.update_counts[j] += 1
    bank.last_t = t
    return learner.predict(np.asarray(z_t, dtype=np.float64)), bank
