import copy
import json

import numpy as np
import pytest

from oracles import brute_force_qp
from scenplan.building import BuildingConfig, build_stylized_building, lift_dynamics
from scenplan.engine import (
    ComfortSpec,
    ExperimentConfig,
    InputLimits,
    OccupancyModel,
    OccupancyScenario,
    assemble_scenario_program,
    empirical_risk,
    experiment_components,
    feasible_start,
    occupancy_model_for,
    risk_histogram,
    run_deterministic,
    run_incremental,
    run_standard,
    sample_occupancy,
    violation_flags,
    zone_temperatures,
)
from scenplan.errors import ValidationError
from scenplan.qp import solve_qp
from scenplan.sizing import RiskParams, standard_sample_size_explicit


def make_occupancy(M=6, lam=3.0, correlation="per-step-iid"):
    return OccupancyModel(
        lam=lam,
        correlation=correlation,
        watts_per_person=100.0,
        flux_per_person=np.array([100.0 / 12, 100.0 / 12, 100.0 / 20]),
        n_zones=3,
        horizon=M,
    )


def make_config(default_config, **overrides):
    base = dict(
        building=default_config,
        horizon_steps=6,
        comfort=ComfortSpec(season="summer", epsilon=0.2, t_max_c=24.0),
        beta=0.05,
        sizing_mode="explicit",
        occupancy_lambda=3.0,
        occupancy_correlation="per-step-iid",
        watts_per_person=100.0,
        validation_sets=3,
        validation_set_size=300,
        seed=777,
        initial_temp_c=22.0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestSampleOccupancy:
    def test_same_seed_is_byte_identical(self):
        occ = make_occupancy()
        a = sample_occupancy(42, 5, occ)
        b = sample_occupancy(42, 5, occ)
        for s1, s2 in zip(a, b):
            assert s1.counts.tobytes() == s2.counts.tobytes()
            assert s1.flux.tobytes() == s2.flux.tobytes()

    def test_batch_equals_incremental_accumulation(self):
        occ = make_occupancy()
        batch = sample_occupancy(7, 10, occ)
        first = sample_occupancy(7, 4, occ)
        rest = sample_occupancy(7, 6, occ, start_index=4)
        for s1, s2 in zip(batch, first + rest):
            assert np.array_equal(s1.counts, s2.counts)

    def test_domains_are_independent_streams(self):
        occ = make_occupancy()
        train = sample_occupancy(7, 3, occ, stream_domain=0)
        val = sample_occupancy(7, 3, occ, stream_domain=1)
        assert any(
            not np.array_equal(s1.counts, s2.counts) for s1, s2 in zip(train, val)
        )

    def test_poisson_moments(self):
        # 300 scenarios x 112 steps x 3 zones > 1e5 draws
        occ = make_occupancy(M=112)
        scenarios = sample_occupancy(3, 300, occ)
        counts = np.concatenate([s.counts.ravel() for s in scenarios]).astype(float)
        assert counts.size >= 10**5
        assert abs(counts.mean() - 3.0) <= 0.05
        assert abs(counts.var() - 3.0) <= 0.1

    def test_flux_is_exact_conversion(self):
        occ = make_occupancy(M=4)
        (s,) = sample_occupancy(5, 1, occ)
        want = (s.counts * occ.flux_per_person[None, :]).ravel()
        assert np.array_equal(s.flux, want)

    def test_constant_over_horizon_holds_counts(self):
        occ = make_occupancy(M=8, correlation="constant-over-horizon")
        (s,) = sample_occupancy(11, 1, occ)
        assert np.array_equal(s.counts, np.tile(s.counts[0], (8, 1)))

    def test_invalid_lambda(self):
        with pytest.raises(ValidationError):
            make_occupancy(lam=0.0)

    def test_invalid_correlation(self):
        with pytest.raises(ValidationError):
            make_occupancy(correlation="weekly")

    def test_negative_count_rejected(self):
        occ = make_occupancy()
        with pytest.raises(ValidationError):
            sample_occupancy(1, -2, occ)


class TestAssembleProgram:
    def test_comfort_row_count(self, default_model):
        lifted = lift_dynamics(default_model, 6, np.full(6, 22.0))
        occ = make_occupancy(M=6)
        scenarios = sample_occupancy(1, 7, occ)
        prog = assemble_scenario_program(
            lifted, scenarios, ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0)
        )
        d = 18
        assert prog.n_bound == 2 * d
        assert prog.n_rows == 2 * d + 7 * 3 * 6
        assert prog.row_tag(2 * d) == ("comfort", 0, 0, 0)
        assert prog.row_tag(2 * d + 3 * 6) == ("comfort", 1, 0, 0)

    def test_no_scenarios_only_input_bounds(self, default_model):
        lifted = lift_dynamics(default_model, 4, np.full(6, 22.0))
        prog = assemble_scenario_program(
            lifted, [], ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0)
        )
        assert prog.n_rows == 2 * 12
        r = solve_qp(prog)
        assert r.status == "optimal"
        assert np.abs(r.U_star).max() <= 1e-9
        assert r.cost == pytest.approx(0.0, abs=1e-12)

    def test_benign_scenario_keeps_zero_optimum(self, default_config_dict):
        # cold ambient, negligible solar: free response stays below the limit
        raw = copy.deepcopy(default_config_dict)
        raw["ambient_temp_c"] = 5.0
        raw["solar_flux_w_m2"] = 1e-9
        model = build_stylized_building(BuildingConfig.from_dict(raw))
        lifted = lift_dynamics(model, 6, np.full(6, 20.0))
        quiet = OccupancyScenario(counts=np.zeros((6, 3), dtype=int), flux=np.zeros(18))
        prog = assemble_scenario_program(
            lifted, [quiet], ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0)
        )
        assert prog.residuals(np.zeros(18))[prog.n_bound :].min() > 0  # comfort slack
        r = solve_qp(prog)
        assert np.abs(r.U_star).max() <= 1e-9

    def test_state_penalty_requires_scenarios(self, default_model):
        lifted = lift_dynamics(default_model, 3, np.full(6, 22.0))
        with pytest.raises(ValidationError):
            assemble_scenario_program(
                lifted,
                [],
                ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0),
                objective=(np.eye(6), None),
            )

    def test_state_penalty_program_matches_brute_force(self, default_model):
        lifted = lift_dynamics(default_model, 2, np.full(6, 22.0))
        occ = make_occupancy(M=2)
        scenarios = sample_occupancy(9, 3, occ)
        Q = 0.01 * np.eye(6)
        prog = assemble_scenario_program(
            lifted,
            scenarios,
            ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0),
            objective=(Q, None),
        )
        r = solve_qp(prog, start=feasible_start(lifted, ComfortSpec("summer", 0.1, 24.0)))
        A = np.vstack([prog.bound_lhs, np.tile(prog.comfort_lhs, (prog.n_scenarios, 1))])
        b = np.concatenate([prog.bound_rhs, prog.comfort_rhs.ravel()])
        want_cost, _ = brute_force_qp(prog.quad_cost, prog.lin_cost, A, b)
        assert want_cost is not None
        assert r.cost == pytest.approx(want_cost, abs=1e-6, rel=1e-6)

    def test_winter_rows_flip_sign(self, default_model):
        lifted = lift_dynamics(default_model, 3, np.full(6, 22.0))
        occ = make_occupancy(M=3)
        scenarios = sample_occupancy(2, 2, occ)
        summer = assemble_scenario_program(
            lifted, scenarios, ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0)
        )
        winter = assemble_scenario_program(
            lifted, scenarios, ComfortSpec(season="winter", epsilon=0.1, t_min_c=18.0)
        )
        assert np.allclose(winter.comfort_lhs, -summer.comfort_lhs)

    def test_winter_program_solves_with_heating(self, default_config_dict):
        raw = copy.deepcopy(default_config_dict)
        raw["ambient_temp_c"] = -5.0
        raw["solar_flux_w_m2"] = 50.0
        model = build_stylized_building(BuildingConfig.from_dict(raw))
        lifted = lift_dynamics(model, 8, np.full(6, 20.0))
        comfort = ComfortSpec(season="winter", epsilon=0.1, t_min_c=18.0)
        quiet = OccupancyScenario(counts=np.zeros((8, 3), dtype=int), flux=np.zeros(24))
        prog = assemble_scenario_program(lifted, [quiet], comfort)
        r = solve_qp(prog, start=feasible_start(lifted, comfort))
        assert r.status == "optimal"
        heat = r.U_star.reshape(8, 3)[:, 1]
        assert heat.max() > 0  # heating works against the cold ambient


class TestRiskEvaluation:
    def _setup(self, default_model, M=6):
        lifted = lift_dynamics(default_model, M, np.full(6, 22.0))
        occ = make_occupancy(M=M)
        comfort = ComfortSpec(season="summer", epsilon=0.1, t_max_c=24.0)
        return lifted, occ, comfort

    def test_max_cooling_has_zero_risk(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        U = feasible_start(lifted, comfort)
        validation = sample_occupancy(3, 200, occ, stream_domain=1)
        assert empirical_risk(U, lifted, comfort, validation) == 0.0

    def test_idle_inputs_under_hot_ambient_violate(self, default_model):
        lifted, occ, comfort = self._setup(default_model, M=24)
        validation = sample_occupancy(3, 200, occ, stream_domain=1)
        assert empirical_risk(np.zeros(72), lifted, comfort, validation) > 0.9

    def test_flag_matches_row_maximum(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        scenarios = sample_occupancy(8, 20, occ)
        U = np.zeros(18)
        flags = violation_flags(U, lifted, comfort, scenarios)
        temps = zone_temperatures(U, lifted, scenarios)
        want = (temps.reshape(20, -1).max(axis=1) > 24.0 + 1e-8)
        assert np.array_equal(flags, want)

    def test_empty_validation_set_rejected(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        with pytest.raises(ValidationError):
            empirical_risk(np.zeros(18), lifted, comfort, [])

    def test_dimension_check(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        validation = sample_occupancy(3, 5, occ)
        with pytest.raises(ValidationError):
            empirical_risk(np.zeros(7), lifted, comfort, validation)

    def test_histogram_first_set_matches_single_risk(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        U = np.zeros(18)
        risks, summary = risk_histogram(U, lifted, comfort, occ, sets=3, set_size=100, rng_seed=5)
        first_set = sample_occupancy(5, 100, occ, start_index=0, stream_domain=1)
        assert risks[0] == empirical_risk(U, lifted, comfort, first_set)
        assert summary["min"] <= summary["mean"] <= summary["max"]
        assert len(risks) == 3

    def test_histogram_determinism(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        U = feasible_start(lifted, comfort) * 0.01
        a, _ = risk_histogram(U, lifted, comfort, occ, sets=2, set_size=50, rng_seed=9)
        b, _ = risk_histogram(U, lifted, comfort, occ, sets=2, set_size=50, rng_seed=9)
        assert a == b

    def test_histogram_input_validation(self, default_model):
        lifted, occ, comfort = self._setup(default_model)
        with pytest.raises(ValidationError):
            risk_histogram(np.zeros(18), lifted, comfort, occ, sets=0, set_size=10, rng_seed=1)


class TestRunners:
    def test_deterministic_uses_one_scenario(self, default_config):
        rep = run_deterministic(make_config(default_config))
        assert rep.scenarios_used == 1
        assert rep.theoretical_epsilon is None
        assert 0.0 <= rep.empirical_risk <= 1.0

    def test_standard_sample_size_and_risk(self, default_config):
        config = make_config(default_config)
        rep = run_standard(config)
        params = RiskParams(0.2, 0.05, 18)
        assert rep.scenarios_used == standard_sample_size_explicit(params)
        assert rep.empirical_risk <= 0.2
        assert rep.support_scenarios <= 18

    def test_incremental_trace_and_dominance(self, default_config):
        config = make_config(default_config)
        rep_s = run_standard(config)
        rep_i = run_incremental(config)
        j, n, s = rep_i.iteration_trace[-1]
        assert s <= j
        assert len(rep_i.iteration_trace) <= 18 + 1
        assert rep_i.scenarios_used == n
        assert rep_i.scenarios_used <= rep_s.scenarios_used
        assert rep_i.cost <= rep_s.cost + 1e-9

    def test_incremental_immediate_termination(self, default_config_dict):
        # benign climate: comfort never binds, zero support at j = 0
        raw = copy.deepcopy(default_config_dict)
        raw["ambient_temp_c"] = 5.0
        raw["solar_flux_w_m2"] = 1e-6
        config = make_config(BuildingConfig.from_dict(raw))
        rep = run_incremental(config)
        assert rep.iteration_trace[0][2] == 0
        assert len(rep.iteration_trace) == 1
        assert rep.cost == pytest.approx(0.0, abs=1e-12)

    def test_runs_are_deterministic(self, default_config):
        config = make_config(default_config)
        a = run_incremental(config)
        b = run_incremental(config)
        assert a.cost == b.cost
        assert a.empirical_risk == b.empirical_risk
        assert np.array_equal(a.U_star, b.U_star)
        assert a.iteration_trace == b.iteration_trace

    def test_seed_override_changes_draws(self, default_config):
        config = make_config(default_config)
        a = run_standard(config)
        b = run_standard(config, rng_seed=config.seed + 1)
        assert a.rng_seed != b.rng_seed
        assert a.cost != b.cost

    def test_degenerate_occupancy_collapses_methods(self, default_config):
        # occupancy that is zero almost surely: the deterministic forecast
        # and every sampled scenario coincide
        config = make_config(
            default_config, occupancy_lambda=1e-12, horizon_steps=4, validation_set_size=50
        )
        rep_d = run_deterministic(config)
        rep_s = run_standard(config)
        assert rep_d.cost == pytest.approx(rep_s.cost, rel=1e-9, abs=1e-9)
        assert rep_d.empirical_risk == rep_s.empirical_risk == 0.0

    def test_nested_cost_monotonicity(self, default_config, default_model):
        lifted = lift_dynamics(default_model, 6, np.full(6, 22.0))
        occ = make_occupancy(M=6)
        comfort = ComfortSpec(season="summer", epsilon=0.2, t_max_c=24.0)
        scenarios = sample_occupancy(13, 60, occ)
        costs = []
        for n in (5, 15, 30, 60):
            prog = assemble_scenario_program(lifted, scenarios[:n], comfort)
            costs.append(solve_qp(prog, start=feasible_start(lifted, comfort)).cost)
        assert all(a <= b + 1e-9 for a, b in zip(costs, costs[1:]))

    def test_report_roundtrips_to_json(self, default_config):
        rep = run_deterministic(make_config(default_config, validation_set_size=50))
        payload = json.loads(json.dumps(rep.to_dict()))
        assert payload["method"] == "deterministic"
        assert payload["scenarios_used"] == 1
        assert len(payload["solution"]) == 18


class TestExperimentConfig:
    def test_from_json_desk_config(self):
        from scenplan.building import default_config_path

        desk = default_config_path().parent / "experiment_desk.json"
        config = ExperimentConfig.from_json(desk)
        assert config.horizon_steps == 12
        assert config.comfort.epsilon == 0.1
        assert config.sizing_mode == "explicit"

    def test_unknown_field_rejected(self, tmp_path, default_config_dict):
        (tmp_path / "building.json").write_text(json.dumps(default_config_dict))
        raw = {
            "building": "building.json",
            "horizon_steps": 4,
            "comfort": {"season": "summer", "t_max_c": 24.0, "epsilon": 0.1},
            "risk": {"beta": 0.01, "mode": "explicit"},
            "occupancy": {"lambda": 3.0},
            "validation": {"sets": 1, "set_size": 10},
            "seed": 1,
            "extra_knob": True,
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValidationError, match="extra_knob"):
            ExperimentConfig.from_json(path)

    def test_missing_field_rejected(self, tmp_path, default_config_dict):
        (tmp_path / "building.json").write_text(json.dumps(default_config_dict))
        raw = {
            "building": "building.json",
            "horizon_steps": 4,
            "comfort": {"season": "summer", "t_max_c": 24.0, "epsilon": 0.1},
            "risk": {"beta": 0.01},
            "occupancy": {"lambda": 3.0},
            "seed": 1,
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValidationError, match="validation"):
            ExperimentConfig.from_json(path)

    def test_summer_requires_t_max(self):
        with pytest.raises(ValidationError):
            ComfortSpec(season="summer", epsilon=0.1)

    def test_winter_requires_t_min(self):
        with pytest.raises(ValidationError):
            ComfortSpec(season="winter", epsilon=0.1)

    def test_epsilon_domain(self):
        with pytest.raises(ValidationError):
            ComfortSpec(season="summer", epsilon=1.2, t_max_c=24.0)


class TestZoneSymmetry:
    def test_symmetric_scenarios_give_coinciding_bedroom_series(self, default_config):
        config = make_config(default_config, horizon_steps=8)
        model, lifted, occ, _ = experiment_components(config)
        scenarios = sample_occupancy(21, 25, occ)
        symmetric = []
        for s in scenarios:
            counts = s.counts.copy()
            counts[:, 1] = counts[:, 0]
            flux = (counts * occ.flux_per_person[None, :]).ravel()
            symmetric.append(OccupancyScenario(counts=counts, flux=flux))
        prog = assemble_scenario_program(lifted, symmetric, config.comfort)
        r = solve_qp(prog, start=feasible_start(lifted, config.comfort))
        temps = zone_temperatures(r.U_star, lifted, symmetric)
        rel = np.abs(temps[:, :, 0] - temps[:, :, 1]) / np.maximum(
            1.0, np.abs(temps[:, :, 0])
        )
        assert rel.max() <= 1e-9
