"""Synthetic scenarios and CSV ingestion for trajectories and offline predictions.

Targets follow an autoregressive law around a fixed center ``c``::

    r_{t+1} - c = sum_m B_m (r_{t+1-m} - c) + g(r_t - c) + d_t

with ``B_1`` acting on the newest state, ``d_t`` uniform in the ball of radius
``d_max`` and ``g`` zero except for the ``nonlinear-sine`` kind, where
``g(x) = nonlinearity * sin(x)`` elementwise. The ``drifting-linear`` kind
moves the coefficients linearly from one stable set to another over the
horizon.

Offline experts are noise-free rollouts of the *initial* law from the initial
history (so they know neither the disturbances nor later drift), then
corrupted per expert by a constant bias, uniform-ball noise and/or a linear
drift that starts at an onset time.

Randomness comes from numpy's Philox counter-based generator keyed by the
scenario seed, so draws are reproducible across platforms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import FloatArray, OfflinePredictionSet, Trajectory

DYNAMICS_KINDS = ("static-linear", "drifting-linear", "nonlinear-sine")


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None) -> None:
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ExpertSpec:
    """How one offline expert deviates from the nominal rollout.

    Attributes:
        bias: constant offset added at every time (length n), or None.
        noise: radius of i.i.d. uniform-ball noise.
        drift_onset: time at which a linear drift starts, or None.
        drift_rate: drift speed (state units per step) after the onset.
    """

    bias: tuple[float, ...] | None = None
    noise: float = 0.0
    drift_onset: int | None = None
    drift_rate: float = 0.0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExpertSpec":
        unknown = set(d) - {"bias", "noise", "drift_onset", "drift_rate"}
        if unknown:
            raise ValueError(f"unknown expert fields: {sorted(unknown)}")
        bias = d.get("bias")
        return cls(
            bias=None if bias is None else tuple(float(b) for b in bias),
            noise=float(d.get("noise", 0.0)),
            drift_onset=None if d.get("drift_onset") is None else int(d["drift_onset"]),
            drift_rate=float(d.get("drift_rate", 0.0)),
        )


@dataclass(frozen=True)
class SyntheticScenario:
    n: int = 2
    p: int = 2
    T: int = 1000
    k: int = 1
    N: int = 1
    dynamics: str = "static-linear"
    d_max: float = 0.01
    experts: tuple[ExpertSpec, ...] = field(default_factory=tuple)
    seed: int = 0
    spectral_radius: float = 0.9
    center_scale: float = 10.0
    init_scale: float = 1.0
    nonlinearity: float = 0.3
    A: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.dynamics not in DYNAMICS_KINDS:
            raise ValueError(f"unknown dynamics kind {self.dynamics!r}; valid kinds: {', '.join(DYNAMICS_KINDS)}")
        if self.n < 1 or self.p < 1 or self.k < 1 or self.N < 1:
            raise ValueError("n, p, k and N must all be >= 1")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.d_max < 0:
            raise ValueError(f"d_max must be nonnegative, got {self.d_max}")
        if len(self.experts) > self.N:
            raise ValueError(f"{len(self.experts)} expert specs for N={self.N}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for spec in self.experts:
            if spec.bias is not None and len(spec.bias) != self.n:
                raise ValueError(f"expert bias has length {len(spec.bias)}, expected n={self.n}")
            if spec.noise < 0:
                raise ValueError("expert noise must be nonnegative")

    def expert_specs(self) -> tuple[ExpertSpec, ...]:
        """Specs for all N experts; unspecified ones are exact rollouts."""
        return self.experts + (ExpertSpec(),) * (self.N - len(self.experts))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["experts"] = [asdict(e) for e in self.experts]
        for e in d["experts"]:
            if e["bias"] is not None:
                e["bias"] = list(e["bias"])
        if self.A is not None:
            d["A"] = [list(row) for row in self.A]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyntheticScenario":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        kwargs = dict(d)
        kwargs["experts"] = tuple(ExpertSpec.from_dict(e) for e in d.get("experts", []))
        if d.get("A") is not None:
            kwargs["A"] = tuple(tuple(float(x) for x in row) for row in d["A"])
        if "N" not in d:
            kwargs["N"] = max(1, len(kwargs["experts"]))
        return cls(**kwargs)


@dataclass
class GroundTruth:
    """Metadata returned alongside generated data."""

    A: FloatArray  # (n, n*p), oldest block first, law at t = 0
    A_final: FloatArray  # law at t = T (differs only for drifting-linear)
    center: FloatArray
    D_r: float
    disturbances: FloatArray  # (T + p, n); row j drives the step into time j - p + 1
    residuals: FloatArray  # (N, T + 1, n)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def uniform_ball(rng: np.random.Generator, radius: float, n: int, size: int | None = None) -> FloatArray:
    """Uniform samples from the n-ball of the given radius."""
    shape = (n,) if size is None else (size, n)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    u = rng.random(shape[:-1] + (1,))
    return radius * g / norms * u ** (1.0 / n)


def companion_radius(A: FloatArray) -> float:
    """Spectral radius of the state-transition matrix of ``A`` (oldest block first)."""
    n, np_ = A.shape
    p = np_ // n
    comp = np.zeros((np_, np_))
    comp[: n * (p - 1), n:] = np.eye(n * (p - 1))
    comp[n * (p - 1) :, :] = A
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def random_stable_matrix(rng: np.random.Generator, n: int, p: int, radius: float) -> FloatArray:
    """Random AR coefficients (oldest block first) with the given companion radius."""
    blocks = [rng.standard_normal((n, n)) / math.sqrt(n * p) for _ in range(p)]  # newest first
    A = np.hstack(blocks[::-1])
    rho = companion_radius(A)
    s = radius / rho
    # Scaling the m-th newest block by s**m scales every eigenvalue by s.
    return np.hstack([blocks[m] * s ** (m + 1) for m in range(p)][::-1])


def _law_at(scenario: SyntheticScenario, A0: FloatArray, A1: FloatArray, t: int) -> FloatArray:
    if scenario.dynamics != "drifting-linear":
        return A0
    s = min(max(t / scenario.T, 0.0), 1.0)
    return (1.0 - s) * A0 + s * A1


def _step(scenario: SyntheticScenario, A: FloatArray, window: FloatArray, center: FloatArray) -> FloatArray:
    """Noise-free next state from the (p, n) window of past states, oldest first."""
    dev = (window - center).ravel()
    nxt = A @ dev
    if scenario.dynamics == "nonlinear-sine":
        nxt = nxt + scenario.nonlinearity * np.sin(window[-1] - center)
    return nxt + center


def generate(scenario: SyntheticScenario) -> tuple[Trajectory, OfflinePredictionSet, GroundTruth]:
    """Draw a target trajectory and N corrupted offline prediction columns.

    The trajectory covers times ``-p..T``. Linear kinds whose companion
    matrix has spectral radius >= 1 anywhere along the horizon are rejected.
    """
    n, p, T = scenario.n, scenario.p, scenario.T
    rng = make_rng(scenario.seed)

    if not 0 < scenario.spectral_radius < 1:
        raise ValueError(f"spectral_radius must lie in (0, 1), got {scenario.spectral_radius}")
    if scenario.A is not None:
        A0 = np.asarray(scenario.A, dtype=np.float64)
        if A0.shape != (n, n * p):
            raise ValueError(f"A must have shape {(n, n * p)}, got {A0.shape}")
        rng.standard_normal((p, n, n))  # keep later draws aligned with the random-A path
    else:
        A0 = random_stable_matrix(rng, n, p, scenario.spectral_radius)
    A1 = random_stable_matrix(rng, n, p, scenario.spectral_radius)
    if scenario.dynamics != "drifting-linear":
        A1 = A0
    for s in np.linspace(0.0, 1.0, 21):
        rho = companion_radius((1 - s) * A0 + s * A1)
        if rho >= 1.0:
            raise ValueError(f"dynamics are not stable: companion spectral radius {rho:.6g} >= 1")

    center = rng.uniform(-scenario.center_scale, scenario.center_scale, size=n)
    init = center + uniform_ball(rng, scenario.init_scale, n, size=p)
    disturbances = uniform_ball(rng, scenario.d_max, n, size=T + p) if scenario.d_max > 0 else np.zeros((T + p, n))

    states = np.zeros((T + p + 1, n))  # row j is time j - p
    states[:p] = init
    for j in range(p, T + p + 1):
        t_prev = j - p - 1
        A = _law_at(scenario, A0, A1, t_prev)
        states[j] = _step(scenario, A, states[j - p : j], center) + disturbances[j - p]
    trajectory = Trajectory(start_time=-p, states=states)

    rollout = np.zeros_like(states)
    rollout[:p] = init
    for j in range(p, T + p + 1):
        rollout[j] = _step(scenario, A0, rollout[j - p : j], center)
    nominal = rollout[p:]

    specs = scenario.expert_specs()
    preds = np.repeat(nominal[None, :, :], scenario.N, axis=0)
    times = np.arange(T + 1)
    for i, spec in enumerate(specs):
        direction = rng.standard_normal(n)
        direction /= max(np.linalg.norm(direction), 1e-300)
        noise = uniform_ball(rng, spec.noise, n, size=T + 1) if spec.noise > 0 else None
        if spec.bias is not None:
            preds[i] = preds[i] + np.asarray(spec.bias)
        if noise is not None:
            preds[i] = preds[i] + noise
        if spec.drift_onset is not None and spec.drift_rate != 0.0:
            ramp = np.maximum(times - spec.drift_onset, 0).astype(np.float64) * spec.drift_rate
            preds[i] = preds[i] + ramp[:, None] * direction
    offline = OfflinePredictionSet(preds)

    residuals = states[p:][None, :, :] - preds
    D_r = float(np.max(np.linalg.norm(residuals, axis=2)))
    truth = GroundTruth(A=A0, A_final=A1, center=center, D_r=D_r, disturbances=disturbances, residuals=residuals)
    return trajectory, offline, truth


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory(path: str | Path, trajectory: Trajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{j}" for j in range(trajectory.n)])
        for t, state in zip(trajectory.times, trajectory.states):
            w.writerow([int(t)] + [_fmt(v) for v in state])


def write_offline_predictions(path: str | Path, offline: OfflinePredictionSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["expert", "t"] + [f"x{j}" for j in range(offline.n)])
        for i in range(offline.N):
            for t in range(offline.T + 1):
                w.writerow([i + 1, t] + [_fmt(v) for v in offline.predictions[i, t]])


def _read_rows(path: str | Path, leading: list[str]) -> tuple[int, list[tuple[int, list[str]]]]:
    """Return the state dimension and (line number, cells) for each data row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("file is empty", path, 1) from None
        header = [h.strip() for h in header]
        nlead = len(leading)
        if header[:nlead] != leading:
            raise DataFormatError(f"header must start with {','.join(leading)}", path, 1)
        coords = header[nlead:]
        if not coords or coords != [f"x{j}" for j in range(len(coords))]:
            raise DataFormatError("state columns must be x0,...,x{n-1}", path, 1)
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            rows.append((reader.line_num, row))
    return len(coords), rows


def _parse_int(cell: str, path: str | Path, line: int, name: str) -> int:
    try:
        return int(cell.strip())
    except ValueError:
        raise DataFormatError(f"non-integer {name} {cell!r}", path, line) from None


def _parse_floats(cells: list[str], path: str | Path, line: int) -> list[float]:
    out = []
    for c in cells:
        try:
            v = float(c.strip())
        except ValueError:
            raise DataFormatError(f"non-numeric value {c!r}", path, line) from None
        if not math.isfinite(v):
            raise DataFormatError(f"non-finite value {c!r}", path, line)
        out.append(v)
    return out


def load_trajectory(path: str | Path) -> Trajectory:
    """Parse a ``t,x0,...`` CSV into a trajectory with contiguous increasing times."""
    n, rows = _read_rows(path, ["t"])
    if not rows:
        raise DataFormatError("no data rows", path)
    times, states = [], []
    for line, row in rows:
        t = _parse_int(row[0], path, line, "time")
        if times and t != times[-1] + 1:
            kind = "duplicate" if t == times[-1] else ("gap in" if t > times[-1] else "decreasing")
            raise DataFormatError(f"{kind} time index: {t} follows {times[-1]}", path, line)
        times.append(t)
        states.append(_parse_floats(row[1:], path, line))
    return Trajectory(start_time=times[0], states=np.array(states, dtype=np.float64).reshape(len(states), n))


def load_offline_predictions(
    path: str | Path,
    N: int | None = None,
    T: int | None = None,
    n: int | None = None,
) -> OfflinePredictionSet:
    """Parse an ``expert,t,x0,...`` CSV covering the full grid ``[1, N] x [0, T]``.

    Missing ``N`` or ``T`` are taken from the largest ids present. Rows may
    come in any order.
    """
    dim, rows = _read_rows(path, ["expert", "t"])
    if n is not None and dim != n:
        raise DataFormatError(f"file has state dimension {dim}, expected {n}", path, 1)
    if not rows:
        raise DataFormatError("no data rows", path)
    cells: dict[tuple[int, int], list[float]] = {}
    parsed = []
    for line, row in rows:
        i = _parse_int(row[0], path, line, "expert id")
        t = _parse_int(row[1], path, line, "time")
        parsed.append((line, i, t, row))
    N_eff = N if N is not None else max(i for _, i, _, _ in parsed)
    T_eff = T if T is not None else max(t for _, _, t, _ in parsed)
    for line, i, t, row in parsed:
        if not 1 <= i <= N_eff:
            raise DataFormatError(f"unknown expert id {i} (expected 1..{N_eff})", path, line)
        if not 0 <= t <= T_eff:
            raise DataFormatError(f"time {t} outside [0, {T_eff}]", path, line)
        if (i, t) in cells:
            raise DataFormatError(f"duplicate entry for expert {i}, t={t}", path, line)
        cells[(i, t)] = _parse_floats(row[2:], path, line)
    preds = np.empty((N_eff, T_eff + 1, dim))
    for i in range(1, N_eff + 1):
        for t in range(T_eff + 1):
            try:
                preds[i - 1, t] = cells[(i, t)]
            except KeyError:
                raise DataFormatError(f"missing prediction for (expert={i}, t={t})", path) from None
    return OfflinePredictionSet(preds)
