"""Exponential weights over corrected experts.

A :class:`CorrectedExpert` wraps one offline prediction column and a k-step
RLS bank that learns its residual. :class:`ExpertEnsemble` drives all experts
through time, scores delayed predictions, updates the softmax weights and
aggregates the next predictions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .core import DimensionError, FloatArray, ResidualBoundWarning, exceeds_residual_bound
from .rls import KStepLearnerBank, bank_step


def uniform_weights(N: int) -> FloatArray:
    if N < 1:
        raise ValueError(f"need at least one expert, got N={N}")
    return np.full(N, 1.0 / N)


def weights_from_cumulative(cum_losses: FloatArray, lam: float) -> FloatArray:
    """Weights after iterating the softmax update from uniform weights.

    Starting from ``1/N``, repeated updates give ``w_i ~ exp(-lam * L_i)``
    with ``L_i`` the cumulative loss of expert ``i``. Works row-wise on a
    (T, N) array. The largest exponent is shifted to zero, so the normalizer
    is at least one.
    """
    logits = -lam * cum_losses
    logits = logits - logits.max(axis=-1, keepdims=True)
    unnorm = np.exp(logits)
    return unnorm / unnorm.sum(axis=-1, keepdims=True)


def update_weights(weights: ArrayLike, losses: ArrayLike, lam: float) -> FloatArray:
    """Softmax update ``w_i <- w_i exp(-lam l_i) / sum_j w_j exp(-lam l_j)``.

    Evaluated in the log domain and shifted by the largest exponent before
    exponentiating, so huge ``lam * l`` never underflows every term at once.
    """
    w = np.asarray(weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if w.shape != losses.shape:
        raise DimensionError(f"{w.shape[0]} weights but {losses.shape[0]} losses")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    if not lam > 0:
        raise ValueError(f"learning rate must be positive, got {lam}")
    if not np.any(w > 0):
        raise RuntimeError("weight vector has no positive entry")
    with np.errstate(divide="ignore"):
        logits = np.log(w) - lam * losses
    logits -= logits.max()
    unnorm = np.exp(logits)
    return unnorm / unnorm.sum()


def aggregate(weights: ArrayLike, predictions: ArrayLike) -> FloatArray:
    """Convex combination ``sum_i w_i r_hat_i``, summed in expert order."""
    w = np.asarray(weights, dtype=np.float64)
    preds = np.asarray(predictions, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] != w.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for predictions of shape {preds.shape}")
    out = w[0] * preds[0]
    for i in range(1, len(w)):
        out = out + w[i] * preds[i]
    return out


class CorrectedExpert:
    """An offline prediction column plus an online residual model.

    Residuals before ``t = 0`` come from ``prehistory`` (oldest first, ending
    at ``t = -1``) and are zero beyond it.

    Args:
        offline: (T + 1, n) offline predictions for times ``0..T``.
        bank: k-step RLS bank, or ``None`` to trust the offline column as is.
        p: regressor memory.
        prehistory: residuals at times ``-m..-1``.
    """

    def __init__(
        self,
        offline: FloatArray,
        bank: KStepLearnerBank | None,
        p: int,
        k: int,
        prehistory: FloatArray | None = None,
    ) -> None:
        self.offline = np.asarray(offline, dtype=np.float64)
        self.bank = bank
        self.p = p
        self.k = k
        self.n = self.offline.shape[1]
        self.T = self.offline.shape[0] - 1
        if bank is not None and bank.k != k:
            raise ValueError(f"bank horizon {bank.k} differs from k={k}")
        pre = np.zeros((0, self.n)) if prehistory is None else np.asarray(prehistory, dtype=np.float64)
        if pre.ndim != 2 or pre.shape[1] != self.n:
            raise DimensionError(f"prehistory must be (m, {self.n}), got {pre.shape}")
        # residuals[t + offset] holds e_t; padding in front covers every lookback.
        self._pad = self.p + self.k + pre.shape[0]
        self._residuals = np.zeros((self._pad + self.T + 1, self.n))
        if pre.shape[0]:
            self._residuals[self._pad - pre.shape[0] : self._pad] = pre

    def residual_at(self, t: int) -> FloatArray:
        return self._residuals[self._pad + t]

    def regressor(self, t: int) -> FloatArray:
        """Stacked residuals ``e_{t-p+1}, ..., e_t``, oldest first, zero where unknown."""
        lo = self._pad + t - self.p + 1
        return self._residuals[lo : self._pad + t + 1].ravel()

    def prediction_before_start(self, t: int) -> FloatArray:
        """Corrected prediction for ``t`` in ``1..k-1``, issued before deployment."""
        if self.bank is None:
            return self.offline[t].copy()
        e_hat = self.bank.predict(t - self.k, self.regressor(t - self.k))
        return e_hat + self.offline[t]

    def advance(self, t: int, r_t: FloatArray) -> tuple[FloatArray, FloatArray | None]:
        """Observe ``r_t`` and return ``(e_t, corrected prediction for t + k)``.

        The learner that predicted time ``t`` is updated first when its
        feedback is available (``t >= k``). The prediction is ``None`` past
        the horizon.
        """
        pad = self._pad
        e_t = r_t - self.offline[t]
        res = self._residuals
        res[pad + t] = e_t
        bank = self.bank
        ahead = t + self.k <= self.T
        if bank is None:
            return e_t, (self.offline[t + self.k].copy() if ahead else None)
        p = self.p
        z_t = res[pad + t - p + 1 : pad + t + 1].ravel()
        if t >= self.k:
            z_prev = res[pad + t - self.k - p + 1 : pad + t - self.k + 1].ravel()
            e_hat, _ = bank_step(bank, t, e_t, z_prev, z_t)
        elif ahead:
            e_hat = bank.predict(t, z_t)
        if not ahead:
            return e_t, None
        return e_t, e_hat + self.offline[t + self.k]


@dataclass
class StepRecord:
    """Losses and predictions scored at one time step."""

    t: int
    truth: FloatArray
    aggregate: FloatArray
    expert_predictions: FloatArray
    loss: float
    expert_losses: FloatArray
    weights: FloatArray


class ExpertEnsemble:
    """Exponential weights over corrected experts with k-step delayed feedback.

    The weights used to aggregate the prediction of time ``t + k`` are the
    ones available right after scoring time ``t``. They are recomputed from
    cumulative losses each step, which equals iterating the softmax update
    from uniform weights but cannot strand an expert at an exact zero.
    """

    def __init__(self, experts: list[CorrectedExpert], lam: float, D_r: float | None = None) -> None:
        if not experts:
            raise ValueError("need at least one expert")
        if not lam > 0:
            raise ValueError(f"learning rate must be positive, got {lam}")
        self.experts = experts
        self.lam = float(lam)
        self.D_r = D_r
        self.N = len(experts)
        self.k = experts[0].k
        self.n = experts[0].n
        self.T = experts[0].T
        for ex in experts:
            if (ex.k, ex.n, ex.T) != (self.k, self.n, self.T):
                raise ValueError("experts disagree on horizon, dimension or delay")
        self.weights = uniform_weights(self.N)
        self._cum = np.zeros(self.N)
        self._pending: dict[int, tuple[FloatArray, FloatArray, FloatArray]] = {}
        self._warned_bound = False
        for t in range(1, min(self.k, self.T + 1)):
            preds = np.stack([ex.prediction_before_start(t) for ex in experts])
            self._pending[t] = (preds, aggregate(self.weights, preds), self.weights.copy())
        self._next_t = 0

    def step(self, t: int, r_t: ArrayLike) -> tuple[FloatArray | None, StepRecord | None]:
        """Process the truth at time ``t``.

        Returns the aggregate prediction for ``t + k`` (``None`` past the
        horizon) and the scored record for ``t`` (``None`` at ``t = 0``).
        """
        if t != self._next_t:
            raise ValueError(f"expected time {self._next_t}, got {t}")
        r_t = np.asarray(r_t, dtype=np.float64)
        if r_t.shape != (self.n,):
            raise DimensionError(f"truth has shape {r_t.shape}, expected ({self.n},)")
        self._next_t += 1

        record = None
        if t >= 1:
            preds, agg, used_w = self._pending.pop(t)
            diff = preds - r_t
            expert_losses = np.einsum("ij,ij->i", diff, diff)
            d = agg - r_t
            record = StepRecord(t, r_t, agg, preds, float(d @ d), expert_losses, used_w)
            if not np.isfinite(expert_losses).all():
                raise ValueError(f"non-finite expert loss at t={t}")
            self._cum = self._cum + expert_losses
            self.weights = weights_from_cumulative(self._cum, self.lam)

        preds_next = []
        for ex in self.experts:
            e_t, pred = ex.advance(t, r_t)
            if self.D_r is not None and not self._warned_bound and exceeds_residual_bound(e_t, self.D_r):
                warnings.warn(
                    f"residual norm {np.linalg.norm(e_t):.6g} at t={t} exceeds D_r={self.D_r}",
                    ResidualBoundWarning,
                    stacklevel=2,
                )
                self._warned_bound = True
            preds_next.append(pred)

        if t + self.k > self.T:
            return None, record
        preds = np.array(preds_next)
        agg_next = aggregate(self.weights, preds)
        self._pending[t + self.k] = (preds, agg_next, self.weights)
        return agg_next, record


def ensemble_init(N: int, lam: float) -> FloatArray:
    """Uniform starting weights after validating ``N`` and ``lam``."""
    if not lam > 0:
        raise ValueError(f"learning rate must be positive, got {lam}")
    return uniform_weights(N)


def prediction_stream(expert: CorrectedExpert, truth: FloatArray) -> FloatArray:
    """All corrected predictions of one expert for times ``1..T``.

    ``truth`` holds the states for times ``0..T``. Produces the same numbers
    as feeding ``expert.advance`` one step at a time, without the per-step
    bookkeeping; the expert's learners end in the same state.
    """
    T, k, p, pad = expert.T, expert.k, expert.p, expert._pad
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (T + 1, expert.n):
        raise DimensionError(f"truth must have shape {(T + 1, expert.n)}, got {truth.shape}")
    preds = np.empty((T, expert.n))
    for t in range(1, min(k, T + 1)):
        preds[t - 1] = expert.prediction_before_start(t)
    res = expert._residuals
    res[pad : pad + T + 1] = truth - expert.offline
    off = expert.offline
    bank = expert.bank
    if bank is None:
        preds[k - 1 :] = off[k:]
        return preds
    for t in range(T + 1):
        z_t = res[pad + t - p + 1 : pad + t + 1].ravel()
        if t >= k:
            z_prev = res[pad + t - k - p + 1 : pad + t - k + 1].ravel()
            e_hat, _ = bank_step(bank, t, res[pad + t], z_prev, z_t)
            if t + k <= T:
                preds[t + k - 1] = e_hat + off[t + k]
        elif t + k <= T:
            preds[t + k - 1] = bank.predict(t, z_t) + off[t + k]
    return preds


def run_batch(
    experts: list[CorrectedExpert], truth: FloatArray, lam: float, D_r: float | None = None
) -> dict[str, FloatArray]:
    """Whole-horizon equivalent of stepping an :class:`ExpertEnsemble`.

    Expert predictions never depend on the weights, so each expert runs on
    its own and the mixture is formed afterwards.

    Returns:
        dict with ``expert_predictions`` (T, N, n), ``expert_losses`` (T, N),
        ``weights`` (T, N), ``aggregate`` (T, n) and ``losses`` (T,), all for
        times ``1..T``.
    """
    if not lam > 0:
        raise ValueError(f"learning rate must be positive, got {lam}")
    if not experts:
        raise ValueError("need at least one expert")
    k, T = experts[0].k, experts[0].T
    for ex in experts:
        if (ex.k, ex.n, ex.T) != (k, experts[0].n, T):
            raise ValueError("experts disagree on horizon, dimension or delay")
    truth = np.asarray(truth, dtype=np.float64)
    preds = np.stack([prediction_stream(ex, truth) for ex in experts], axis=1)
    if D_r is not None:
        for ex in experts:
            e = ex._residuals[ex._pad :]
            norms = np.sqrt(np.einsum("tj,tj->t", e, e))
            over = np.flatnonzero(norms > D_r)
            if over.size:
                warnings.warn(
                    f"residual norm {norms[over[0]]:.6g} at t={over[0]} exceeds D_r={D_r}",
                    ResidualBoundWarning,
                    stacklevel=2,
                )
                break
    N = preds.shape[1]
    diff = preds - truth[1:, None, :]
    expert_losses = np.einsum("tij,tij->ti", diff, diff)
    if not np.isfinite(expert_losses).all():
        raise ValueError("non-finite expert loss")
    # Prediction for time t is mixed with weights after scoring times 1..t-k.
    cum = np.cumsum(expert_losses, axis=0)
    known = np.zeros((T, N))
    if T > k:
        known[k:] = cum[: T - k]
    weights = weights_from_cumulative(known, lam)
    weights[:k] = uniform_weights(N)
    agg = weights[:, 0, None] * preds[:, 0]
    for i in range(1, N):
        agg = agg + weights[:, i, None] * preds[:, i]
    d = agg - truth[1:]
    return {
        "expert_predictions": preds,
        "expert_losses": expert_losses,
        "weights": weights,
        "aggregate": agg,
        "losses": np.einsum("tj,tj->t", d, d),
    }
