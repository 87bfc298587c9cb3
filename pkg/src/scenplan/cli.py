"""Command-line front end: sizing tables, experiment runs, risk validation.

Subcommands:
    size      print the one-shot sample size and the incremental
              (j, M_j, beta_j, N_j) schedule as CSV
    run       execute an experiment (deterministic | standard | incremental
              | all) and write report JSON plus plot-data CSVs
    validate  evaluate a stored solution on many fresh validation sets

Exit codes: 0 success, 2 usage, 3 configuration/validation problem,
4 solver failure. SCENPLAN_LOG controls log verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    ExperimentConfig,
    RUNNERS,
    empirical_risk,
    experiment_components,
    sample_occupancy,
    zone_temperatures,
    _DOMAIN_VALIDATION,
)
from .errors import ConvergenceError, ValidationError
from .sizing import (
    RiskParams,
    incremental_schedule,
    standard_sample_size_exact,
    standard_sample_size_explicit,
)

log = logging.getLogger("scenplan")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4


@dataclass
class RunManifest:
    """What a command produced, sufficient to reproduce it."""

    command: str
    config_path: str | None
    seed: int | None
    out_dir: str
    tool_version: str = __version__
    timestamp: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        self.timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "command": self.command,
                    "config_path": self.config_path,
                    "seed": self.seed,
                    "out_dir": self.out_dir,
                    "tool_version": self.tool_version,
                    "timestamp": self.timestamp,
                    "outputs": self.outputs,
                },
                fh,
                indent=2,
            )
            fh.write("\n")
        return path


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=Path, help="output directory (default: current)")
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker threads for validation sets",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenplan",
        description="Scenario-based building energy-management planner",
    )
    parser.add_argument("--version", action="version", version=f"scenplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_size = sub.add_parser("size", help="print sample-size tables as CSV")
    p_size.add_argument("--epsilon", type=float, required=True, help="risk level in (0,1)")
    p_size.add_argument("--beta", type=float, required=True, help="confidence level in (0,1)")
    p_size.add_argument("--dims", type=int, required=True, help="decision dimension d")
    p_size.add_argument("--mode", choices=["exact", "explicit"], default="explicit")
    _common_flags(p_size)

    p_run = sub.add_parser("run", help="run an experiment and write reports")
    p_run.add_argument(
        "--method",
        choices=["deterministic", "standard", "incremental", "all"],
        required=True,
    )
    _common_flags(p_run)

    p_val = sub.add_parser("validate", help="multi-set risk validation of a solution")
    p_val.add_argument(
        "--solution",
        type=Path,
        required=True,
        help="report JSON (with a 'solution' entry) or plain text vector file",
    )
    p_val.add_argument("--sets", type=int, default=100)
    p_val.add_argument("--set-size", type=int, default=3000)
    _common_flags(p_val)
    return parser


def cmd_size(args) -> int:
    try:
        params = RiskParams(epsilon=args.epsilon, beta=args.beta, d=args.dims)
        if args.mode == "exact":
            n_standard = standard_sample_size_exact(params)
        else:
            n_standard = standard_sample_size_explicit(params)
        schedule = incremental_schedule(params, args.mode)
    except ValidationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print("row_type,j,M_j,beta_j,N_j")
    print(f"standard,,,,{n_standard}")
    for j, M_j, beta_j, N_j in schedule.rows():
        print(f"iteration,{j},{M_j},{beta_j!r},{N_j}")
    return EXIT_OK


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ValidationError("--config is required for this command")
    if not args.config.exists():
        raise ValidationError(f"config file not found: {args.config}")
    return ExperimentConfig.from_json(args.config)


def _write_report(report, out_dir: Path) -> Path:
    path = out_dir / f"{report.method}_report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return path


def _write_trajectories(report, config, seed: int, out_dir: Path) -> Path:
    """Per-zone temperature series of the optimal schedule under every
    validation scenario, plus the mean-occupancy nominal trajectory."""
    model, lifted, occ, _ = experiment_components(config)
    U = np.asarray(report.U_star)
    validation = sample_occupancy(
        seed, config.validation_set_size, occ, stream_domain=_DOMAIN_VALIDATION
    )
    temps = zone_temperatures(U, lifted, validation)
    nominal_flux = np.tile(occ.lam * occ.flux_per_person, lifted.horizon_M)
    nominal = zone_temperatures(U, lifted, nominal_flux[None, :])[0]
    path = out_dir / f"{report.method}_trajectories.csv"
    names = model.zone_names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scenario,zone,step,temp_c\n")
        for z, zname in enumerate(names):
            for k in range(lifted.horizon_M):
                fh.write(f"nominal,{zname},{k},{nominal[k, z]:.6f}\n")
        for i in range(temps.shape[0]):
            for z, zname in enumerate(names):
                for k in range(lifted.horizon_M):
                    fh.write(f"{i},{zname},{k},{temps[i, k, z]:.6f}\n")
    return path


_SUMMARY_HEADER = "method,scenarios_used,cost,theoretical_epsilon,empirical_risk,seed"


def _summary_row(report) -> str:
    eps = "" if report.theoretical_epsilon is None else repr(report.theoretical_epsilon)
    return (
        f"{report.method},{report.scenarios_used},{report.cost!r},"
        f"{eps},{report.empirical_risk!r},{report.rng_seed}"
    )


def cmd_run(args) -> int:
    try:
        config = _load_config(args)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = config.seed if args.seed is None else args.seed
    out_dir = args.out or Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = (
        ["deterministic", "standard", "incremental"] if args.method == "all" else [args.method]
    )
    manifest = RunManifest(
        command="run", config_path=str(args.config), seed=seed, out_dir=str(out_dir)
    )
    print(_SUMMARY_HEADER)
    for method in methods:
        log.info("running %s method (seed %d)", method, seed)
        try:
            report = RUNNERS[method](config, rng_seed=seed)
        except ValidationError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConvergenceError as exc:
            print(f"solver error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        manifest.outputs.append(str(_write_report(report, out_dir)))
        manifest.outputs.append(str(_write_trajectories(report, config, seed, out_dir)))
        print(_summary_row(report))
    manifest.write(out_dir)
    return EXIT_OK


def _load_solution(path: Path) -> np.ndarray:
    if not path.exists():
        raise ValidationError(f"solution file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        payload = json.loads(text)
        if not isinstance(payload, dict) or payload.get("solution") is None:
            raise ValidationError(f"report {path} has no 'solution' entry")
        return np.asarray(payload["solution"], dtype=float)
    try:
        return np.asarray([float(v) for v in text.split()], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"could not parse solution vector from {path}") from exc


def cmd_validate(args) -> int:
    try:
        config = _load_config(args)
        U = _load_solution(args.solution)
        model, lifted, occ, _ = experiment_components(config)
        if U.shape != (lifted.n_decisions,):
            raise ValidationError(
                f"solution has dimension {U.shape[0] if U.ndim else 0}, "
                f"config implies {lifted.n_decisions}"
            )
        if args.sets < 1 or args.set_size < 1:
            raise ValidationError("--sets and --set-size must be >= 1")
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = config.seed if args.seed is None else args.seed

    def one_set(s: int) -> float:
        scenarios = sample_occupancy(
            seed, args.set_size, occ, start_index=s * args.set_size,
            stream_domain=_DOMAIN_VALIDATION,
        )
        return empirical_risk(U, lifted, config.comfort, scenarios)

    threads = max(1, args.threads)
    if threads == 1:
        risks = [one_set(s) for s in range(args.sets)]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            risks = list(pool.map(one_set, range(args.sets)))

    lines = ["set,empirical_risk"]
    lines += [f"{s},{r!r}" for s, r in enumerate(risks)]
    lines += [
        f"min,{min(risks)!r}",
        f"max,{max(risks)!r}",
        f"mean,{sum(risks) / len(risks)!r}",
    ]
    csv_text = "\n".join(lines) + "\n"
    sys.stdout.write(csv_text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        hist_path = out_dir / "risk_histogram.csv"
        hist_path.write_text(csv_text, encoding="utf-8")
        manifest = RunManifest(
            command="validate",
            config_path=str(args.config),
            seed=seed,
            out_dir=str(out_dir),
            outputs=[str(hist_path)],
        )
        manifest.write(out_dir)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SCENPLAN_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "size":
        return cmd_size(args)
    if args.command == "run":
        return cmd_run(args)
    return cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
