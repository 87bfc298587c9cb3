"""Scenario generation, program assembly, and the three experiment drivers
(deterministic, one-shot, incremental) with Monte Carlo risk validation.

Randomness is organized as one substream per scenario index inside a few
fixed domains (training draws, validation draws, forecast draws), so that
scenario i is the same whether it is drawn in one batch or accumulated
incrementally, and parallel evaluation cannot change results.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .building import (
    BuildingConfig,
    BuildingModel,
    LiftedDynamics,
    build_stylized_building,
    lift_dynamics,
)
from .errors import ValidationError
from .qp import (
    DEFAULT_FEAS_TOL,
    ScenarioProgram,
    SolveResult,
    count_support_constraints,
    count_support_scenarios,
    solve_qp,
)
from .sizing import (
    RiskParams,
    incremental_schedule,
    standard_sample_size_exact,
    standard_sample_size_explicit,
)

# stream domains for seeded sub-generators
_DOMAIN_TRAINING = 0
_DOMAIN_VALIDATION = 1
_DOMAIN_FORECAST = 2

CORRELATION_MODES = ("per-step-iid", "constant-over-horizon")


@dataclass(frozen=True)
class OccupancyModel:
    """Occupancy draw specification plus the count-to-flux conversion."""

    lam: float
    correlation: str
    watts_per_person: float
    flux_per_person: np.ndarray  # (n_zones,) W/m^2 added per occupant
    n_zones: int
    horizon: int

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"occupancy lambda must be positive, got {self.lam}")
        if self.correlation not in CORRELATION_MODES:
            raise ValidationError(
                f"correlation must be one of {CORRELATION_MODES}, got {self.correlation!r}"
            )


@dataclass(frozen=True)
class OccupancyScenario:
    """One occupancy realization: per-step per-zone counts and the induced
    stacked heat-flux vector (step-major, one channel per zone)."""

    counts: np.ndarray  # (M, n_zones) nonnegative ints
    flux: np.ndarray  # (M * n_zones,)


@dataclass(frozen=True)
class ComfortSpec:
    season: str  # "summer" | "winter"
    epsilon: float
    t_max_c: float | None = None
    t_min_c: float | None = None

    def __post_init__(self):
        if self.season not in ("summer", "winter"):
            raise ValidationError(f"season must be 'summer' or 'winter', got {self.season!r}")
        if self.season == "summer" and self.t_max_c is None:
            raise ValidationError("summer comfort requires t_max_c")
        if self.season == "winter" and self.t_min_c is None:
            raise ValidationError("winter comfort requires t_min_c")
        if not (0.0 < self.epsilon < 1.0):
            raise ValidationError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class InputLimits:
    """Per-channel closed boxes for (blind fraction, heating, cooling)."""

    lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: tuple[float, float, float] = (0.9, 1000.0, 1000.0)


@dataclass
class ExperimentReport:
    method: str
    scenarios_used: int
    cost: float
    theoretical_epsilon: float | None
    empirical_risk: float
    rng_seed: int
    timing_seconds: float
    sizing_mode: str | None = None
    iteration_trace: list[tuple[int, int, int]] = field(default_factory=list)
    support_rows: int | None = None
    support_scenarios: int | None = None
    solver_iterations: int = 0
    validation_size: int = 0
    U_star: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "scenarios_used": self.scenarios_used,
            "cost": self.cost,
            "theoretical_epsilon": self.theoretical_epsilon,
            "empirical_risk": self.empirical_risk,
            "rng_seed": self.rng_seed,
            "timing_seconds": self.timing_seconds,
            "sizing_mode": self.sizing_mode,
            "iteration_trace": [list(t) for t in self.iteration_trace],
            "support_rows": self.support_rows,
            "support_scenarios": self.support_scenarios,
            "solver_iterations": self.solver_iterations,
            "validation_size": self.validation_size,
            "solution": None if self.U_star is None else [float(v) for v in self.U_star],
        }


@dataclass(frozen=True)
class ExperimentConfig:
    building: BuildingConfig
    horizon_steps: int
    comfort: ComfortSpec
    beta: float
    sizing_mode: str
    occupancy_lambda: float
    occupancy_correlation: str
    watts_per_person: float
    validation_sets: int
    validation_set_size: int
    seed: int
    initial_temp_c: float = 22.0
    forecast_draws: int = 100
    building_path: str | None = None

    @staticmethod
    def from_dict(raw: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        known = {
            "building",
            "horizon_steps",
            "comfort",
            "risk",
            "occupancy",
            "validation",
            "seed",
            "initial_temp_c",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown field(s) {sorted(unknown)} in experiment config")
        for key in ("building", "horizon_steps", "comfort", "risk", "occupancy", "validation", "seed"):
            if key not in raw:
                raise ValidationError(f"experiment config missing field '{key}'")

        building_path = Path(base_dir) / raw["building"]
        building = BuildingConfig.from_json(building_path)

        c = raw["comfort"]
        unknown = set(c) - {"season", "t_max_c", "t_min_c", "epsilon"}
        if unknown:
            raise ValidationError(f"unknown field(s) {sorted(unknown)} in comfort")
        comfort = ComfortSpec(
            season=c["season"],
            epsilon=float(c["epsilon"]),
            t_max_c=float(c["t_max_c"]) if "t_max_c" in c else None,
            t_min_c=float(c["t_min_c"]) if "t_min_c" in c else None,
        )

        r = raw["risk"]
        unknown = set(r) - {"beta", "mode"}
        if unknown:
            raise ValidationError(f"unknown field(s) {sorted(unknown)} in risk")
        mode = r.get("mode", "explicit")

        o = raw["occupancy"]
        unknown = set(o) - {"lambda", "correlation", "watts_per_person", "forecast_draws"}
        if unknown:
            raise ValidationError(f"unknown field(s) {sorted(unknown)} in occupancy")

        v = raw["validation"]
        unknown = set(v) - {"sets", "set_size"}
        if unknown:
            raise ValidationError(f"unknown field(s) {sorted(unknown)} in validation")

        horizon = int(raw["horizon_steps"])
        if horizon < 1:
            raise ValidationError(f"horizon_steps must be >= 1, got {horizon}")
        return ExperimentConfig(
            building=building,
            horizon_steps=horizon,
            comfort=comfort,
            beta=float(r["beta"]),
            sizing_mode=str(mode),
            occupancy_lambda=float(o["lambda"]),
            occupancy_correlation=str(o.get("correlation", "per-step-iid")),
            watts_per_person=float(o.get("watts_per_person", 100.0)),
            forecast_draws=int(o.get("forecast_draws", 100)),
            validation_sets=int(v["sets"]),
            validation_set_size=int(v["set_size"]),
            seed=int(raw["seed"]),
            initial_temp_c=float(raw.get("initial_temp_c", 22.0)),
            building_path=str(building_path),
        )

    @staticmethod
    def from_json(path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh), base_dir=path.parent)


def occupancy_model_for(model: BuildingModel, config: ExperimentConfig) -> OccupancyModel:
    areas = np.asarray(model.zone_floor_areas)
    return OccupancyModel(
        lam=config.occupancy_lambda,
        correlation=config.occupancy_correlation,
        watts_per_person=config.watts_per_person,
        flux_per_person=config.watts_per_person / areas,
        n_zones=model.n_zones,
        horizon=config.horizon_steps,
    )


def sample_occupancy(
    rng_seed: int,
    count: int,
    occupancy: OccupancyModel,
    start_index: int = 0,
    stream_domain: int = _DOMAIN_TRAINING,
) -> list[OccupancyScenario]:
    """Draw scenarios `start_index .. start_index+count-1` from per-index
    substreams of the given seed, so batch and incremental draws coincide."""
    if count < 0:
        raise ValidationError(f"scenario count must be >= 0, got {count}")
    M, nz = occupancy.horizon, occupancy.n_zones
    out = []
    for i in range(start_index, start_index + count):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(rng_seed), spawn_key=(stream_domain, i))
        )
        if occupancy.correlation == "per-step-iid":
            counts = rng.poisson(occupancy.lam, size=(M, nz))
        else:
            counts = np.tile(rng.poisson(occupancy.lam, size=nz), (M, 1))
        flux = (counts * occupancy.flux_per_person[None, :]).ravel()
        out.append(OccupancyScenario(counts=counts, flux=flux))
    return out


def _flux_matrix(scenarios) -> np.ndarray:
    if isinstance(scenarios, np.ndarray):
        return np.atleast_2d(np.asarray(scenarios, dtype=float))
    return np.array([s.flux for s in scenarios], dtype=float)


def assemble_scenario_program(
    lifted: LiftedDynamics,
    scenarios,
    comfort: ComfortSpec,
    input_limits: InputLimits = InputLimits(),
    objective: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
) -> ScenarioProgram:
    """Build the QP: per-step input boxes plus one comfort row per
    (scenario, zone, step), rewritten onto the stacked input vector.

    `objective` is the per-step (Q, R) pair; Q = None means no state
    penalty, R = None means the identity. With Q nonzero the state term is
    averaged over the supplied scenarios, which requires at least one.
    """
    d = lifted.n_decisions
    M = lifted.horizon_M
    nu = lifted.n_inputs
    Q, R = objective
    if R is None:
        R = np.eye(nu)
    R = np.asarray(R, dtype=float)
    if R.shape != (nu, nu):
        raise ValidationError(f"R must have shape ({nu}, {nu}), got {R.shape}")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("R must be positive definite") from exc

    fluxes = _flux_matrix(scenarios)
    n_scen = 0 if fluxes.size == 0 else fluxes.shape[0]

    zr = lifted.zone_rows()
    G_z = lifted.G[zr, :]
    base = (lifted.F @ lifted.x0 + lifted.offset)[zr]
    if comfort.season == "summer":
        comfort_lhs = G_z
        limit = comfort.t_max_c
        sign = 1.0
    else:
        comfort_lhs = -G_z
        limit = comfort.t_min_c
        sign = -1.0
    comfort_rhs = None
    if n_scen:
        H_z = lifted.H[zr, :]
        # summer: G_z U <= T_max - base - H_z delta ; winter mirrors with -1
        comfort_rhs = sign * (limit - base[None, :] - fluxes @ H_z.T)

    lower = np.tile(np.asarray(input_limits.lower, dtype=float), M)
    upper = np.tile(np.asarray(input_limits.upper, dtype=float), M)
    eye = np.eye(d)
    bound_lhs = np.vstack([eye, -eye])
    bound_rhs = np.concatenate([upper, -lower])

    quad = np.kron(np.eye(M), R)
    lin = np.zeros(d)
    if Q is not None and np.any(np.asarray(Q)):
        Q = np.asarray(Q, dtype=float)
        ns = lifted.state_dim
        if Q.shape != (ns, ns):
            raise ValidationError(f"Q must have shape ({ns}, {ns}), got {Q.shape}")
        eigs = np.linalg.eigvalsh(Q)
        if eigs.min() < -1e-10:
            raise ValidationError("Q must be positive semidefinite")
        if n_scen == 0:
            raise ValidationError("state penalty Q requires at least one scenario")
        Qbar = np.kron(np.eye(M), Q)
        v_mean = lifted.F @ lifted.x0 + lifted.offset + lifted.H @ fluxes.mean(axis=0)
        quad = quad + lifted.G.T @ Qbar @ lifted.G
        lin = lin + 2.0 * lifted.G.T @ (Qbar @ v_mean)

    return ScenarioProgram(
        quad_cost=quad,
        lin_cost=lin,
        bound_lhs=bound_lhs,
        bound_rhs=bound_rhs,
        comfort_lhs=comfort_lhs if n_scen else None,
        comfort_rhs=comfort_rhs,
        comfort_meta=(lifted.n_zones, M),
    )


def feasible_start(
    lifted: LiftedDynamics, comfort: ComfortSpec, input_limits: InputLimits = InputLimits()
) -> np.ndarray:
    """Heuristic feasible point: blinds shut with full cooling in summer,
    blinds open with full heating in winter. Callers should still verify it
    against the assembled program."""
    if comfort.season == "summer":
        u = [input_limits.upper[0], input_limits.lower[1], input_limits.upper[2]]
    else:
        u = [input_limits.lower[0], input_limits.upper[1], input_limits.lower[2]]
    return np.tile(np.asarray(u, dtype=float), lifted.horizon_M)


def _checked_start(program: ScenarioProgram, candidate: np.ndarray) -> np.ndarray | None:
    return candidate if program.residuals(candidate).min() >= -DEFAULT_FEAS_TOL else None


def zone_temperatures(U: np.ndarray, lifted: LiftedDynamics, scenarios) -> np.ndarray:
    """Zone air temperatures under U for each scenario; shape
    (n_scenarios, M, n_zones)."""
    fluxes = _flux_matrix(scenarios)
    if fluxes.size == 0:
        raise ValidationError("empty scenario set")
    zr = lifted.zone_rows()
    temps = (lifted.F @ lifted.x0 + lifted.offset + lifted.G @ U)[zr][None, :] + fluxes @ lifted.H[
        zr, :
    ].T
    return temps.reshape(fluxes.shape[0], lifted.horizon_M, lifted.n_zones)


def violation_flags(
    U: np.ndarray,
    lifted: LiftedDynamics,
    comfort: ComfortSpec,
    scenarios,
    tol: float = DEFAULT_FEAS_TOL,
) -> np.ndarray:
    """Per-scenario flag: does any (zone, step) comfort row fail under U."""
    temps = zone_temperatures(U, lifted, scenarios)
    if comfort.season == "summer":
        return (temps > comfort.t_max_c + tol).any(axis=(1, 2))
    return (temps < comfort.t_min_c - tol).any(axis=(1, 2))


def empirical_risk(
    U: np.ndarray,
    lifted: LiftedDynamics,
    comfort: ComfortSpec,
    validation,
    tol: float = DEFAULT_FEAS_TOL,
) -> float:
    """Fraction of validation scenarios with at least one comfort violation."""
    U = np.asarray(U, dtype=float)
    if U.shape != (lifted.n_decisions,):
        raise ValidationError(f"U must have shape ({lifted.n_decisions},), got {U.shape}")
    return float(violation_flags(U, lifted, comfort, validation, tol).mean())


def risk_histogram(
    U: np.ndarray,
    lifted: LiftedDynamics,
    comfort: ComfortSpec,
    occupancy: OccupancyModel,
    sets: int,
    set_size: int,
    rng_seed: int,
) -> tuple[list[float], dict]:
    """Empirical risk over `sets` independent validation sets; returns the
    per-set risks and min/max/mean summary."""
    if sets < 1 or set_size < 1:
        raise ValidationError("sets and set_size must be >= 1")
    risks = []
    for s in range(sets):
        scenarios = sample_occupancy(
            rng_seed,
            set_size,
            occupancy,
            start_index=s * set_size,
            stream_domain=_DOMAIN_VALIDATION,
        )
        risks.append(empirical_risk(U, lifted, comfort, scenarios))
    summary = {
        "min": min(risks),
        "max": max(risks),
        "mean": sum(risks) / len(risks),
    }
    return risks, summary


def experiment_components(config: ExperimentConfig):
    """Shared setup: building model, lifted dynamics, occupancy model, risk
    parameters."""
    model = build_stylized_building(config.building)
    x0 = np.full(model.state_dim, config.initial_temp_c)
    lifted = lift_dynamics(model, config.horizon_steps, x0)
    occ = occupancy_model_for(model, config)
    params = RiskParams(
        epsilon=config.comfort.epsilon, beta=config.beta, d=lifted.n_decisions
    )
    return model, lifted, occ, params


def _report_validation(config, lifted, occ, seed, U) -> float:
    validation = sample_occupancy(
        seed, config.validation_set_size, occ, stream_domain=_DOMAIN_VALIDATION
    )
    return empirical_risk(U, lifted, config.comfort, validation)


def _solve(program: ScenarioProgram, lifted, comfort) -> SolveResult:
    start = _checked_start(program, feasible_start(lifted, comfort))
    result = solve_qp(program, start=start)
    if result.status != "optimal":
        raise ValidationError("scenario program reported infeasible; check the configuration")
    return result


def run_deterministic(config: ExperimentConfig, rng_seed: int | None = None) -> ExperimentReport:
    """Plan against the empirical mean of a batch of forecast draws and
    validate the resulting schedule against fresh scenarios."""
    seed = config.seed if rng_seed is None else int(rng_seed)
    t0 = time.perf_counter()
    model, lifted, occ, _ = experiment_components(config)
    forecast = sample_occupancy(
        seed, config.forecast_draws, occ, stream_domain=_DOMAIN_FORECAST
    )
    nominal = _flux_matrix(forecast).mean(axis=0)
    program = assemble_scenario_program(lifted, nominal[None, :], config.comfort)
    result = _solve(program, lifted, config.comfort)
    risk = _report_validation(config, lifted, occ, seed, result.U_star)
    return ExperimentReport(
        method="deterministic",
        scenarios_used=1,
        cost=result.cost,
        theoretical_epsilon=None,
        empirical_risk=risk,
        rng_seed=seed,
        timing_seconds=time.perf_counter() - t0,
        solver_iterations=result.n_iterations,
        validation_size=config.validation_set_size,
        U_star=result.U_star,
    )


def run_standard(config: ExperimentConfig, rng_seed: int | None = None) -> ExperimentReport:
    """One-shot scenario run at the full sample size for (epsilon, beta, d)."""
    seed = config.seed if rng_seed is None else int(rng_seed)
    t0 = time.perf_counter()
    model, lifted, occ, params = experiment_components(config)
    if config.sizing_mode == "exact":
        N = standard_sample_size_exact(params)
    else:
        N = standard_sample_size_explicit(params)
    scenarios = sample_occupancy(seed, N, occ)
    program = assemble_scenario_program(lifted, scenarios, config.comfort)
    result = _solve(program, lifted, config.comfort)
    n_rows, _ = count_support_constraints(program, result)
    n_scen, _ = count_support_scenarios(program, result)
    risk = _report_validation(config, lifted, occ, seed, result.U_star)
    return ExperimentReport(
        method="standard",
        scenarios_used=N,
        cost=result.cost,
        theoretical_epsilon=config.comfort.epsilon,
        empirical_risk=risk,
        rng_seed=seed,
        timing_seconds=time.perf_counter() - t0,
        sizing_mode=config.sizing_mode,
        support_rows=n_rows,
        support_scenarios=n_scen,
        solver_iterations=result.n_iterations,
        validation_size=config.validation_set_size,
        U_star=result.U_star,
    )


def run_incremental(config: ExperimentConfig, rng_seed: int | None = None) -> ExperimentReport:
    """Grow the scenario set along the per-iteration schedule until the
    support-scenario count is no larger than the iteration index."""
    seed = config.seed if rng_seed is None else int(rng_seed)
    t0 = time.perf_counter()
    model, lifted, occ, params = experiment_components(config)
    schedule = incremental_schedule(params, config.sizing_mode)

    scenarios: list[OccupancyScenario] = []
    trace: list[tuple[int, int, int]] = []
    result = None
    support = None
    total_iters = 0
    for j in range(params.d + 1):
        target = schedule.N[j]
        if target > len(scenarios):
            scenarios.extend(
                sample_occupancy(seed, target - len(scenarios), occ, start_index=len(scenarios))
            )
        program = assemble_scenario_program(lifted, scenarios, config.comfort)
        result = _solve(program, lifted, config.comfort)
        total_iters += result.n_iterations
        support, _ = count_support_scenarios(program, result)
        trace.append((j, len(scenarios), support))
        if support <= j:
            break

    risk = _report_validation(config, lifted, occ, seed, result.U_star)
    return ExperimentReport(
        method="incremental",
        scenarios_used=len(scenarios),
        cost=result.cost,
        theoretical_epsilon=config.comfort.epsilon,
        empirical_risk=risk,
        rng_seed=seed,
        timing_seconds=time.perf_counter() - t0,
        sizing_mode=config.sizing_mode,
        iteration_trace=trace,
        support_scenarios=support,
        solver_iterations=total_iters,
        validation_size=config.validation_set_size,
        U_star=result.U_star,
    )


RUNNERS = {
    "deterministic": run_deterministic,
    "standard": run_standard,
    "incremental": run_incremental,
}
