"""Command-line runner: ``run``, ``tune`` and ``synth`` subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 data or validation
error, 3 I/O error. Messages go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .bench import (
    METHODS,
    MethodConfig,
    RunTrace,
    emit_plot_data,
    hindsight_static_comparator,
    residual_streams,
    run_method,
    summarize,
    write_summary,
)
from .core import OfflinePredictionSet, Trajectory
from .datagen import (
    DataFormatError,
    SyntheticScenario,
    generate,
    load_offline_predictions,
    load_trajectory,
    write_offline_predictions,
    write_trajectory,
)
from .tuning import TuningInputs, exp_concavity_alpha, expert_regret_term, forgetting_factor, lambda_max

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_IO = 3

DEFAULT_N = 20


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 1)."""


class LearningRateWarning(UserWarning):
    """The mixture learning rate exceeds the value covered by the regret bound."""


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one ``run``.

    Either ``trajectory`` and ``offline`` point to CSV inputs, or
    ``scenario`` holds a synthetic scenario (datagen field names). ``n``,
    ``T`` and ``N`` are inferred from the data when left as None; a
    synthetic scenario defaults to ``N = 20`` experts. ``D_r`` defaults to
    the largest residual norm in the data.
    """

    p: int = 2
    k: int = 60
    N: int | None = None
    T: int | None = None
    n: int | None = None
    gamma: float | tuple[float, ...] = 0.8
    epsilon: float = 1.0
    D: float = 5.0
    D_r: float | None = None
    lam: float = 1e-4
    methods: tuple[str, ...] = METHODS
    trajectory: str | None = None
    offline: str | None = None
    scenario: dict[str, Any] | None = None
    out: str = "results"
    seed: int | None = None
    projection: str = "exact"

    def __post_init__(self) -> None:
        if self.p < 1 or self.k < 1:
            raise ConfigError(f"p and k must be >= 1, got p={self.p}, k={self.k}")
        for name in ("N", "T", "n"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        gammas = (self.gamma,) if isinstance(self.gamma, (int, float)) else self.gamma
        if not gammas or not all(0.0 < g <= 1.0 for g in gammas):
            raise ConfigError(f"every forgetting factor must lie in (0, 1], got {self.gamma}")
        if not self.lam > 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.D > 0:
            raise ConfigError(f"D must be positive, got {self.D}")
        if self.D_r is not None and not self.D_r > 0:
            raise ConfigError(f"D_r must be positive, got {self.D_r}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"unknown methods {unknown}; valid methods: {', '.join(METHODS)}")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.scenario is None and (self.trajectory is None or self.offline is None):
            raise ConfigError("need either a synthetic scenario or both trajectory and offline paths")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["methods"] = list(self.methods)
        if not isinstance(self.gamma, (int, float)):
            d["gamma"] = list(self.gamma)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        if isinstance(kw.get("gamma"), list):
            kw["gamma"] = tuple(float(g) for g in kw["gamma"])
        if isinstance(kw.get("methods"), str):
            kw["methods"] = tuple(m.strip() for m in kw["methods"].split(",") if m.strip())
        elif "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def method_config(self, N: int, D_r: float) -> MethodConfig:
        gamma = self.gamma
        if not isinstance(gamma, (int, float)) and len(gamma) != N:
            raise ConfigError(f"{len(gamma)} forgetting factors for N={N} experts")
        return MethodConfig(
            p=self.p, k=self.k, gamma=gamma, epsilon=self.epsilon, D=self.D, lam=self.lam,
            D_r=D_r, projection=self.projection,
        )


def load_config(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _scenario(cfg: RunConfig) -> SyntheticScenario:
    spec = dict(cfg.scenario or {})
    for name, value in (("p", cfg.p), ("k", cfg.k), ("N", cfg.N), ("T", cfg.T), ("n", cfg.n), ("seed", cfg.seed)):
        if value is None:
            continue
        if name in spec and spec[name] != value and name != "seed":
            raise ConfigError(f"scenario {name}={spec[name]} conflicts with config {name}={value}")
        spec[name] = value
    if "N" not in spec:
        spec["N"] = max(DEFAULT_N, len(spec.get("experts", [])))
    try:
        return SyntheticScenario.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def resolve_data(cfg: RunConfig) -> tuple[Trajectory, OfflinePredictionSet]:
    """Load or generate the trajectory and offline predictions for ``cfg``."""
    if cfg.trajectory is not None and cfg.offline is not None:
        traj = load_trajectory(cfg.trajectory)
        off = load_offline_predictions(cfg.offline, N=cfg.N, T=cfg.T, n=cfg.n)
        if traj.n != off.n:
            raise DataFormatError(f"trajectory has n={traj.n} but offline predictions have n={off.n}")
        return traj, off
    traj, off, _ = generate(_scenario(cfg))
    return traj, off


def realized_residual_bound(traj: Trajectory, off: OfflinePredictionSet) -> float:
    if not (traj.has(0) and traj.has(off.T)):
        raise DataFormatError(
            f"trajectory covers [{traj.start_time}, {traj.end_time}] but the horizon needs [0, {off.T}]"
        )
    e = traj.window(0, off.T)[None] - off.predictions
    return float(np.max(np.linalg.norm(e, axis=2)))


def execute(cfg: RunConfig) -> tuple[list[RunTrace], list]:
    """Run every configured method; nothing is written."""
    traj, off = resolve_data(cfg)
    D_r = cfg.D_r if cfg.D_r is not None else max(realized_residual_bound(traj, off), 1e-300)
    if cfg.lam > lambda_max(D_r, cfg.D):
        warnings.warn(
            f"lam={cfg.lam:.6g} exceeds lambda_max(D_r={D_r:.6g}, D={cfg.D:.6g})={lambda_max(D_r, cfg.D):.6g}; "
            "the regret guarantee does not cover this run",
            LearningRateWarning,
            stacklevel=2,
        )
    mcfg = cfg.method_config(off.N, D_r)
    traces = [run_method(m, traj, off, mcfg) for m in cfg.methods]
    E, Z = residual_streams(traj, off, cfg.p, cfg.k)
    comparator = hindsight_static_comparator(E, Z, cfg.D)
    results = [summarize(tr, comparator) for tr in traces]
    return traces, results


def cmd_run(cfg: RunConfig) -> list[Path]:
    """Run, then write all outputs into ``cfg.out``.

    Outputs are staged in a temporary directory and moved in only after
    every file is written, so a failure leaves no partial results behind.
    """
    traces, results = execute(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out, prefix=".staging-") as tmp:
        staged = emit_plot_data(traces, tmp)
        staged.append(write_summary(results, tmp))
        final = []
        for path in staged:
            target = out / path.name
            os.replace(path, target)
            final.append(target)
    return final


def cmd_tune(inputs: TuningInputs, min_gamma: float | None = 0.05) -> dict[str, float]:
    """``lambda_max``, ``gamma`` and ``expert_term`` for the given bounds."""
    alpha = exp_concavity_alpha(inputs.D_r, inputs.D)
    return {
        "lambda_max": lambda_max(inputs.D_r, inputs.D),
        "gamma": forgetting_factor(inputs.V_T, inputs.T, inputs.D, min_gamma=min_gamma),
        "expert_term": expert_regret_term(inputs.N, alpha),
    }


def cmd_synth(scenario: SyntheticScenario, trajectory_path: str | Path, offline_path: str | Path) -> None:
    traj, off, _ = generate(scenario)
    write_trajectory(trajectory_path, traj)
    write_offline_predictions(offline_path, off)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orl", description="Online residual learning over offline trajectory predictions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run prediction methods and write loss, weight and summary CSVs")
    run.add_argument("--config", help="JSON file with RunConfig fields")
    run.add_argument("--out", help="output directory")
    run.add_argument("--trajectory", help="trajectory CSV (t,x0,...)")
    run.add_argument("--offline", help="offline predictions CSV (expert,t,x0,...)")
    run.add_argument("--seed", type=int, help="seed for a synthetic scenario")
    run.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")

    tune = sub.add_parser("tune", help="print the learning rate, forgetting factor and expert regret term")
    tune.add_argument("--config", help="JSON file with D_r, D, T, V_T, N")
    tune.add_argument("--D_r", type=float)
    tune.add_argument("--D", type=float)
    tune.add_argument("--T", type=int)
    tune.add_argument("--V_T", type=float)
    tune.add_argument("--N", type=int)
    tune.add_argument("--min-gamma", type=float, default=0.05, help="clamp floor for gamma (default 0.05)")

    synth = sub.add_parser("synth", help="generate a synthetic scenario and write its CSVs")
    synth.add_argument("--config", help="JSON file with scenario fields")
    synth.add_argument("--out", help="directory for trajectory.csv and offline.csv")
    synth.add_argument("--trajectory", help="trajectory CSV path (overrides --out)")
    synth.add_argument("--offline", help="offline predictions CSV path (overrides --out)")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--dynamics")
    synth.add_argument("--n", type=int)
    synth.add_argument("--p", type=int)
    synth.add_argument("--k", type=int)
    synth.add_argument("--N", type=int)
    synth.add_argument("--T", type=int)
    synth.add_argument("--d-max", dest="d_max", type=float)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    overrides = {
        "out": args.out,
        "trajectory": args.trajectory,
        "offline": args.offline,
        "seed": args.seed,
        "methods": args.methods,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    # Explicit file inputs replace a synthetic scenario from the config file.
    if args.trajectory is not None or args.offline is not None:
        data.pop("scenario", None)
    return RunConfig.from_dict(data)


def _tuning_inputs(args: argparse.Namespace) -> TuningInputs:
    data = load_config(args.config) if args.config else {}
    for name in ("D_r", "D", "T", "V_T", "N"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    missing = [name for name in ("D_r", "D", "T") if name not in data]
    if missing:
        raise ConfigError(f"tune needs {', '.join(missing)}")
    unknown = set(data) - {"D_r", "D", "T", "V_T", "N"}
    if unknown:
        raise ConfigError(f"unknown tuning fields: {sorted(unknown)}")
    try:
        return TuningInputs(**data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _synth_targets(args: argparse.Namespace) -> tuple[SyntheticScenario, Path, Path]:
    data = load_config(args.config) if args.config else {}
    for name in ("seed", "dynamics", "n", "p", "k", "N", "T", "d_max"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    try:
        scenario = SyntheticScenario.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out) if args.out else Path(".")
    traj = Path(args.trajectory) if args.trajectory else out / "trajectory.csv"
    off = Path(args.offline) if args.offline else out / "offline.csv"
    if args.out:
        out.mkdir(parents=True, exist_ok=True)
    return scenario, traj, off


def _fmt(x: float) -> str:
    return repr(float(x))


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            cmd_run(_run_config(args))
        elif args.command == "tune":
            inputs = _tuning_inputs(args)
            report = cmd_tune(inputs, min_gamma=args.min_gamma)
            for key, value in report.items():
                print(f"{key}={_fmt(value)}")
        else:
            scenario, traj, off = _synth_targets(args)
            cmd_synth(scenario, traj, off)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK
