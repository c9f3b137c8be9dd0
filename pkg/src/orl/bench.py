"""Evaluation harness: the four prediction methods, ADE, hindsight regret, CSV output.

Methods:
    orl              corrected experts (RLS on residuals) combined by exponential weights
    online           one RLS learner on the raw target, no offline knowledge
    offline_experts  raw offline predictions combined by exponential weights
    best_offline     the single offline expert with the smallest ADE in hindsight

Every method is scored on times ``1..T``; the prediction for time ``t`` is
issued at ``t - k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FloatArray, OfflinePredictionSet, Trajectory
from .ensemble import CorrectedExpert, run_batch
from .rls import bank_init, clip_singular_values, spectral_norm

METHODS = ("orl", "online", "offline_experts", "best_offline")


class HedgeBoundViolation(AssertionError):
    """The exponential-weights loss bound failed where it is guaranteed to hold."""


@dataclass(frozen=True)
class MethodConfig:
    """Learning hyperparameters shared by the methods.

    ``gamma`` is a scalar or one value per expert; the ``online`` method uses
    the first entry.
    """

    p: int = 2
    k: int = 1
    gamma: float | tuple[float, ...] = 0.8
    epsilon: float = 1.0
    D: float = 5.0
    lam: float = 1e-4
    D_r: float | None = None
    projection: str = "exact"

    def gamma_for(self, i: int) -> float:
        if isinstance(self.gamma, (int, float)):
            return float(self.gamma)
        return float(self.gamma[i])

    def check_experts(self, N: int) -> None:
        if not isinstance(self.gamma, (int, float)) and len(self.gamma) != N:
            raise ValueError(f"{len(self.gamma)} forgetting factors for N={N} experts")


@dataclass
class RunTrace:
    """Per-step record of one method over times ``1..T``.

    Attributes:
        method: method name.
        times: scored times, shape (T,).
        truth: true states, (T, n).
        aggregate: the method's predictions, (T, n).
        expert_predictions: per-expert predictions, (T, N, n).
        losses: squared loss of ``aggregate``, (T,).
        expert_losses: squared loss of each expert, (T, N).
        weights: weights used to form each aggregate, (T, N); None when the
            method does not mix experts.
        lam: learning rate of the mixture, if any.
        k: prediction horizon.
    """

    method: str
    times: np.ndarray
    truth: FloatArray
    aggregate: FloatArray
    expert_predictions: FloatArray
    losses: FloatArray
    expert_losses: FloatArray
    weights: FloatArray | None = None
    lam: float | None = None
    k: int = 1
    cumloss: FloatArray = field(init=False)

    def __post_init__(self) -> None:
        self.cumloss = np.cumsum(self.losses)

    @property
    def T(self) -> int:
        return int(len(self.times))

    @property
    def total_loss(self) -> float:
        return float(self.cumloss[-1]) if self.T else 0.0


@dataclass(frozen=True)
class MethodResult:
    method: str
    cumloss: float
    ade_sq: float
    ade_l2: float
    regret_static: float | None = None


@dataclass
class ComparatorResult:
    """Best static residual predictor per expert, fitted in hindsight.

    ``losses`` are per-step losses of the constrained fit (shape (N, T));
    the ``unconstrained_*`` fields hold the plain ridge solution.
    """

    matrices: FloatArray
    losses: FloatArray
    unconstrained_matrices: FloatArray
    unconstrained_losses: FloatArray
    constrained: np.ndarray

    @property
    def cumulative(self) -> FloatArray:
        return self.losses.sum(axis=1)


@dataclass(frozen=True)
class RegretReport:
    comparator: str
    comparator_loss: float
    regret: float
    path_length: float
    best_expert: int
    unconstrained_regret: float | None = None


def _check_data(trajectory: Trajectory, offline: OfflinePredictionSet) -> int:
    T = offline.T
    if trajectory.n != offline.n:
        raise ValueError(f"trajectory dimension {trajectory.n} differs from offline dimension {offline.n}")
    if trajectory.start_time > 0 or trajectory.end_time < T:
        raise ValueError(
            f"trajectory covers [{trajectory.start_time}, {trajectory.end_time}] but the horizon needs [0, {T}]"
        )
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    return T


def _run_ensemble(
    method: str, experts: list[CorrectedExpert], trajectory: Trajectory, cfg: MethodConfig, D_r: float | None
) -> RunTrace:
    T = experts[0].T
    out = run_batch(experts, trajectory.window(0, T), cfg.lam, D_r=D_r)
    return RunTrace(
        method, np.arange(1, T + 1), trajectory.window(1, T).copy(), out["aggregate"], out["expert_predictions"],
        out["losses"], out["expert_losses"], out["weights"], cfg.lam, cfg.k,
    )


def hedge_bound_applies(trace: RunTrace) -> bool:
    """Whether the exp-concavity argument covers this run.

    Needs undelayed feedback (``k = 1``) and ``lam <= 1 / (2 max loss)``, i.e.
    every expert loss inside the region where the squared loss is
    ``lam``-exp-concave.
    """
    if trace.weights is None or trace.lam is None or trace.k != 1 or trace.T == 0:
        return False
    return 2.0 * trace.lam * float(np.max(trace.expert_losses)) <= 1.0


def hedge_bound_slack(trace: RunTrace) -> float:
    """``min_i L_i + ln(N) / lam - L`` (nonnegative when the bound holds)."""
    if trace.lam is None:
        raise ValueError("trace has no mixture learning rate")
    N = trace.expert_losses.shape[1]
    best = float(np.min(trace.expert_losses.sum(axis=0)))
    return best + math.log(N) / trace.lam - trace.total_loss


def check_hedge_bound(trace: RunTrace) -> None:
    if not hedge_bound_applies(trace):
        return
    slack = hedge_bound_slack(trace)
    # Small relative slack absorbs summation-order rounding when N = 1 and the bound is tight.
    if slack < -1e-9 * max(1.0, trace.total_loss):
        raise HedgeBoundViolation(f"{trace.method}: exponential-weights bound violated by {-slack:.6g}")


def run_method(method: str, trajectory: Trajectory, offline: OfflinePredictionSet, cfg: MethodConfig) -> RunTrace:
    """Run one method over the full horizon and return its trace."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    T = _check_data(trajectory, offline)
    n, N = offline.n, offline.N

    if method == "best_offline":
        truth = trajectory.window(1, T)
        cols = offline.predictions[:, 1 : T + 1, :]
        diff = cols - truth[None]
        per_expert = np.einsum("itj,itj->ti", diff, diff)
        best = int(np.argmin(per_expert.mean(axis=0)))
        pred = cols[best]
        return RunTrace(
            method, np.arange(1, T + 1), truth.copy(), pred.copy(), pred[:, None, :].copy(),
            per_expert[:, best].copy(), per_expert[:, [best]].copy(), None, None, cfg.k,
        )

    if method == "online":
        history = trajectory.window(trajectory.start_time, -1) if trajectory.start_time < 0 else None
        bank = bank_init(cfg.k, n, cfg.p, cfg.gamma_for(0), cfg.epsilon, cfg.D, projection=cfg.projection)
        expert = CorrectedExpert(np.zeros((T + 1, n)), bank, cfg.p, cfg.k, prehistory=history)
        # Its residuals are raw states, so the offline residual bound does not apply.
        return _run_ensemble(method, [expert], trajectory, cfg, None)

    cfg.check_experts(N)
    experts = []
    for i in range(N):
        bank = None
        if method == "orl":
            bank = bank_init(cfg.k, n, cfg.p, cfg.gamma_for(i), cfg.epsilon, cfg.D, projection=cfg.projection)
        experts.append(CorrectedExpert(offline.column(i), bank, cfg.p, cfg.k))
    trace = _run_ensemble(method, experts, trajectory, cfg, cfg.D_r)
    check_hedge_bound(trace)
    return trace


def ade(trace: RunTrace, horizon: int | None = None) -> float:
    """Mean squared loss over the first ``horizon`` scored steps."""
    T = trace.T if horizon is None else horizon
    if T < 1 or trace.T == 0:
        raise ValueError("ADE needs a nonempty trace")
    if T > trace.T:
        raise ValueError(f"trace covers {trace.T} steps, horizon {T} requested")
    return float(np.mean(trace.losses[:T]))


def ade_l2(trace: RunTrace, horizon: int | None = None) -> float:
    """Conventional ADE: mean Euclidean displacement."""
    T = trace.T if horizon is None else horizon
    if T < 1 or trace.T == 0:
        raise ValueError("ADE needs a nonempty trace")
    if T > trace.T:
        raise ValueError(f"trace covers {trace.T} steps, horizon {T} requested")
    return float(np.mean(np.linalg.norm(trace.aggregate[:T] - trace.truth[:T], axis=1)))


def residual_streams(
    trajectory: Trajectory, offline: OfflinePredictionSet, p: int, k: int
) -> tuple[FloatArray, FloatArray]:
    """Residuals ``e_t`` and the regressors ``z_{t-k}`` that predict them, for ``t = 1..T``.

    Returns arrays of shape (N, T, n) and (N, T, n*p); residuals before
    ``t = 0`` are zero, matching the online learners.
    """
    T = _check_data(trajectory, offline)
    n, N = offline.n, offline.N
    E_full = trajectory.window(0, T)[None] - offline.predictions  # (N, T+1, n)
    pad = p + k
    padded = np.concatenate([np.zeros((N, pad, n)), E_full], axis=1)  # index t + pad
    Z = np.empty((N, T, n * p))
    for t in range(1, T + 1):
        hi = t - k + pad + 1
        Z[:, t - 1] = padded[:, hi - p : hi].reshape(N, n * p)
    return E_full[:, 1:].copy(), Z


def _ridge_fit(E: FloatArray, Z: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    G = Z.T @ Z + np.eye(Z.shape[1])
    B = E.T @ Z
    M = np.linalg.solve(G, B.T).T
    return M, G, B


def _constrained_ridge(G: FloatArray, B: FloatArray, M0: FloatArray, D: float, tol: float = 1e-8, max_iter: int = 100_000) -> FloatArray:
    """Accelerated projected gradient on ``tr(M G M^T) - 2 tr(B M^T)`` over ``||M|| <= D``."""
    L = float(np.linalg.eigvalsh(G)[-1])
    M = clip_singular_values(M0, D)
    Y = M.copy()
    s = 1.0
    for _ in range(max_iter):
        M_next = clip_singular_values(Y - (Y @ G - B) / L, D)
        delta = float(np.linalg.norm(M_next - M))
        s_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * s * s))
        Y = M_next + ((s - 1.0) / s_next) * (M_next - M)
        if float(np.sum((M_next - M) * (Y - M_next))) > 0:  # momentum restart
            Y, s_next = M_next.copy(), 1.0
        M, s = M_next, s_next
        if delta <= tol * max(1.0, float(np.linalg.norm(M))):
            break
    return M


def hindsight_static_comparator(E: FloatArray, Z: FloatArray, D: float) -> ComparatorResult:
    """Per expert, the ridge-regularized static predictor fitted on all data.

    Minimizes ``sum_t ||e_t - M z_t||^2 + ||M||_F^2``; if the minimizer leaves
    the ball ``||M|| <= D`` the constrained problem is solved by projected
    gradient. Reported losses exclude the ridge term.
    """
    E = np.asarray(E, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if E.ndim == 2:
        E, Z = E[None], Z[None]
    if E.shape[:2] != Z.shape[:2]:
        raise ValueError(f"residuals {E.shape} and regressors {Z.shape} are misaligned")
    N, T, n = E.shape
    mats, losses, u_mats, u_losses, flags = [], [], [], [], []
    for i in range(N):
        M_u, G, B = _ridge_fit(E[i], Z[i])
        R_u = E[i] - Z[i] @ M_u.T
        u_mats.append(M_u)
        u_losses.append(np.einsum("tj,tj->t", R_u, R_u))
        if spectral_norm(M_u) > D:
            M = _constrained_ridge(G, B, M_u, D)
            R = E[i] - Z[i] @ M.T
            mats.append(M)
            losses.append(np.einsum("tj,tj->t", R, R))
            flags.append(True)
        else:
            mats.append(M_u)
            losses.append(u_losses[-1])
            flags.append(False)
    return ComparatorResult(
        np.array(mats), np.array(losses), np.array(u_mats), np.array(u_losses), np.array(flags)
    )


def empirical_regret(trace: RunTrace, comparator: ComparatorResult) -> RegretReport:
    """Cumulative loss minus the best expert's static hindsight comparator."""
    if comparator.losses.shape[1] != trace.T:
        raise ValueError(f"comparator covers {comparator.losses.shape[1]} steps, trace {trace.T}")
    cum = comparator.cumulative
    best = int(np.argmin(cum))
    u_best = float(np.min(comparator.unconstrained_losses.sum(axis=1)))
    return RegretReport(
        comparator="static hindsight ridge predictor per expert (path length 0)",
        comparator_loss=float(cum[best]),
        regret=trace.total_loss - float(cum[best]),
        path_length=0.0,
        best_expert=best,
        unconstrained_regret=trace.total_loss - u_best,
    )


def regret_at(trace: RunTrace, E: FloatArray, Z: FloatArray, D: float, horizons: Sequence[int]) -> list[float]:
    """Regret against comparators refitted on each prefix ``1..h``."""
    out = []
    for h in horizons:
        if not 1 <= h <= trace.T:
            raise ValueError(f"horizon {h} outside 1..{trace.T}")
        comp = hindsight_static_comparator(E[:, :h], Z[:, :h], D)
        out.append(float(trace.cumloss[h - 1]) - float(np.min(comp.cumulative)))
    return out


def summarize(trace: RunTrace, comparator: ComparatorResult | None = None) -> MethodResult:
    regret = None if comparator is None else empirical_regret(trace, comparator).regret
    return MethodResult(trace.method, trace.total_loss, ade(trace), ade_l2(trace), regret)


def _fmt(x: float | None) -> str:
    return "" if x is None else format(float(x), ".17g")


def emit_plot_data(traces: Sequence[RunTrace], out_dir: str | Path) -> list[Path]:
    """Write ``loss_<method>.csv`` for every trace and ``weights.csv`` for the mixture.

    The weights file comes from the ``orl`` trace, else the first trace that
    mixes experts; it is omitted when none does.
    """
    if not traces:
        raise ValueError("no traces to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tr in traces:
        path = out / f"loss_{tr.method}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,loss,cumloss\n")
            for t, loss, cum in zip(tr.times, tr.losses, tr.cumloss):
                fh.write(f"{int(t)},{_fmt(loss)},{_fmt(cum)}\n")
        written.append(path)
    mixing = [tr for tr in traces if tr.weights is not None]
    if mixing:
        src = next((tr for tr in mixing if tr.method == "orl"), mixing[0])
        path = out / "weights.csv"
        N = src.weights.shape[1]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t," + ",".join(f"w_{i + 1}" for i in range(N)) + "\n")
            for t, w in zip(src.times, src.weights):
                fh.write(f"{int(t)}," + ",".join(_fmt(x) for x in w) + "\n")
        written.append(path)
    return written


def write_summary(results: Sequence[MethodResult], out_dir: str | Path) -> Path:
    path = Path(out_dir) / "summary.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("method,cumloss,ade_sq,ade_l2,regret_static\n")
        for r in results:
            fh.write(f"{r.method},{_fmt(r.cumloss)},{_fmt(r.ade_sq)},{_fmt(r.ade_l2)},{_fmt(r.regret_static)}\n")
    return path
