"""Tests for the evaluation grid, result files and episode traces."""

import json
import math

import numpy as np
import pytest

from recopt.domain import load_config
from recopt.evaluate import (
    ExperimentPlan,
    ReturnEstimate,
    discounted_return,
    evaluate,
    render_csv,
    render_summary,
    rollout_trace,
    time_policies,
    write_results,
)
from recopt.exogenous import sample_sequence, scenario_params
from recopt.policies import make_policy, parse_policy_spec
from recopt.simulator import (
    OBSERVATION_VERSION,
    CostMode,
    exogenous_at,
    initial_state,
    observation_layout,
    step,
)


def specs(*texts):
    return tuple(parse_policy_spec(text) for text in texts)


def small_plan(**overrides):
    settings = dict(
        config="rec2",
        policies=specs("rec", "self"),
        scenarios=2,
        seeds=(0, 1),
        horizon=20,
    )
    settings.update(overrides)
    return ExperimentPlan(**settings)


def write_zero_price_config(directory):
    """A two-member config whose tariffs make every rollout cost zero."""
    profiles = directory / "profiles.csv"
    rows = ["m1:consumption,m2:production"]
    rows += [f"{0.3 + 0.01 * (t % 5):.4f},{0.4:.4f}" for t in range(30)]
    profiles.write_text("\n".join(rows) + "\n")
    config = {
        "name": "zeroprice",
        "tariffs": {
            "buy": [0.0, 0.0],
            "sell": [0.0, 0.0],
            "offtake_peak": 0.0,
            "injection_peak": 0.0,
            "rec_buy_fee": 0.0,
            "rec_sell_fee": 0.0,
        },
        "time_grid": {
            "step_hours": 1.0,
            "steps_per_market": 2,
            "markets_per_billing": 3,
            "horizon": 24,
            "discount": 0.99,
        },
        "batteries": [
            {
                "owner": 2,
                "capacity_kwh": 1.0,
                "max_charge_kw": 0.2,
                "max_discharge_kw": 0.2,
                "eff_charge": 1.0,
                "eff_discharge": 1.0,
            }
        ],
        "noise": {"correlation": 0.5, "sigma": 0.1, "relative": False},
        "profiles_csv": "profiles.csv",
    }
    path = directory / "zeroprice.json"
    path.write_text(json.dumps(config))
    return str(path)


class TestExperimentPlan:
    def test_defaults(self):
        plan = ExperimentPlan(config="rec2", policies=specs("rec"))
        assert plan.scenarios == 1
        assert plan.seeds == (0,)
        assert plan.horizon is None
        assert plan.labels() == ("rec",)

    def test_policies_must_be_nonempty_and_distinct(self):
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=())
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec", "rec"))

    def test_scenarios_must_be_positive(self):
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec"), scenarios=0)

    def test_seeds_must_be_distinct_nonnegative_and_nonempty(self):
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec"), seeds=())
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec"), seeds=(1, 1))
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec"), seeds=(-3,))

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError):
            ExperimentPlan(config="rec2", policies=specs("rec"), horizon=0)

    def test_horizon_checked_against_config_at_run_time(self):
        plan = small_plan(horizon=500)
        with pytest.raises(ValueError):
            evaluate(plan)


class TestReturnEstimate:
    def test_mean_must_match_per_seed_average(self):
        ReturnEstimate("rec", -2.0, 0.5, (-1.0, -3.0))
        with pytest.raises(ValueError):
            ReturnEstimate("rec", -1.5, 0.5, (-1.0, -3.0))

    def test_error_rows_carry_no_numbers(self):
        estimate = ReturnEstimate("rl", None, None, (), error="no server")
        assert estimate.error == "no server"
        with pytest.raises(ValueError):
            ReturnEstimate("rec", None, None, ())


class TestDiscountedReturn:
    def test_matches_manual_rollout(self):
        config = load_config("rec2")
        scenario = sample_sequence(config, scenario_params(config, 3))
        policy = make_policy(config, parse_policy_spec("rec"))
        value = discounted_return(config, policy, scenario, 25)
        policy.reset(scenario)
        state = initial_state(config)
        total = 0.0
        for t in range(25):
            exo = exogenous_at(scenario, t)
            action = policy.action(state, exo)
            state, cost = step(config, state, exo, action)
            total -= config.grid.discount**t * cost
        assert abs(value - total) < 1e-12


class TestEvaluate:
    def test_runs_are_deterministic(self):
        plan = small_plan()
        first = evaluate(plan)
        second = evaluate(plan)
        assert render_csv(plan, first) == render_csv(plan, second)
        assert render_summary(plan, first) == render_summary(plan, second)

    def test_policies_share_scenarios(self):
        alone = evaluate(small_plan(policies=specs("rec")))
        paired = evaluate(small_plan(policies=specs("rec", "self")))
        rec_alone = alone[0]
        rec_paired = next(e for e in paired if e.policy == "rec")
        assert rec_alone.per_seed_returns == rec_paired.per_seed_returns

    def test_mean_and_standard_error(self):
        estimates = evaluate(small_plan())
        for estimate in estimates:
            returns = estimate.per_seed_returns
            assert abs(estimate.mean_return - sum(returns) / len(returns)) < 1e-12
            expected = np.std(returns, ddof=1) / math.sqrt(len(returns))
            assert abs(estimate.standard_error - expected) < 1e-12

    def test_single_seed_has_zero_standard_error(self):
        estimates = evaluate(small_plan(seeds=(4,), scenarios=1))
        assert estimates[0].standard_error == 0.0

    def test_external_policy_yields_error_row_others_run(self):
        plan = small_plan(policies=specs("rl", "rec"))
        estimates = evaluate(plan)
        assert estimates[0].policy == "rl"
        assert estimates[0].error is not None
        assert estimates[0].mean_return is None
        assert estimates[1].error is None
        assert estimates[1].mean_return < 0.0

    def test_zero_price_config_returns_zero(self, tmp_path):
        path = write_zero_price_config(tmp_path)
        plan = ExperimentPlan(
            config=path, policies=specs("rec", "self", "opt"),
            scenarios=2, seeds=(0, 1),
        )
        for estimate in evaluate(plan):
            assert estimate.error is None
            assert estimate.mean_return == 0.0

    def test_estimates_follow_plan_order(self):
        plan = small_plan(policies=specs("self", "rec"))
        estimates = evaluate(plan)
        assert [e.policy for e in estimates] == ["self", "rec"]


class TestResultFiles:
    def test_csv_rows_sorted_and_round_trip(self):
        plan = small_plan()
        estimates = evaluate(plan)
        lines = render_csv(plan, estimates).splitlines()
        assert lines[0] == "policy,seed,return"
        rows = [line.split(",") for line in lines[1:]]
        assert rows == sorted(rows, key=lambda r: (r[0], int(r[1])))
        assert len(rows) == len(plan.policies) * len(plan.seeds)
        by_policy = {}
        for policy, seed, value in rows:
            by_policy.setdefault(policy, []).append(float(value))
        for estimate in estimates:
            assert np.allclose(
                sorted(by_policy[estimate.policy]),
                sorted(estimate.per_seed_returns),
                atol=0.0,
            )

    def test_error_rows_stay_out_of_csv(self):
        plan = small_plan(policies=specs("rl", "rec"))
        estimates = evaluate(plan)
        body = render_csv(plan, estimates).splitlines()[1:]
        assert all(line.startswith("rec,") for line in body)

    def test_summary_is_sorted_json_with_optional_timings(self):
        plan = small_plan()
        estimates = evaluate(plan)
        payload = json.loads(render_summary(plan, estimates))
        assert payload["config"] == "rec2"
        assert [r["policy"] for r in payload["results"]] == ["rec", "self"]
        assert "timings" not in payload
        timed = json.loads(render_summary(plan, estimates, {"rec": 0.1, "self": math.nan}))
        assert timed["timings"]["rec"] == 0.1
        assert timed["timings"]["self"] is None

    def test_write_results_creates_files(self, tmp_path):
        plan = small_plan()
        estimates = evaluate(plan)
        paths = write_results(plan, estimates, tmp_path / "results")
        assert (tmp_path / "results" / "results.csv").read_text() == render_csv(plan, estimates)
        summary = json.loads((tmp_path / "results" / "summary.json").read_text())
        assert summary["seeds"] == [0, 1]
        assert set(paths) == {"csv", "summary"}


class TestTimePolicies:
    def test_reports_positive_seconds(self):
        plan = small_plan(policies=specs("rec", "self"))
        timings = time_policies(plan, calls=4)
        assert set(timings) == {"rec", "self"}
        for value in timings.values():
            assert value > 0.0
            assert math.isfinite(value)

    def test_external_policy_times_out_as_nan(self):
        plan = small_plan(policies=specs("rl", "rec"))
        timings = time_policies(plan, calls=4)
        assert math.isnan(timings["rl"])
        assert math.isfinite(timings["rec"])


class TestRolloutTrace:
    def test_structure_and_lengths(self):
        config = load_config("rec2")
        trace = rollout_trace(config, parse_policy_spec("rec"))
        horizon = config.grid.horizon
        assert trace["observation_version"] == OBSERVATION_VERSION
        assert trace["layout"] == list(observation_layout(config))
        assert trace["policy"] == "rec"
        assert trace["mode"] == {"dense": False, "retail": False}
        assert len(trace["observations"]) == horizon + 1
        assert len(trace["rewards"]) == horizon
        assert len(trace["actions"]) == horizon
        assert all(len(row) == len(trace["layout"]) for row in trace["observations"])

    def test_noise_free_trace_is_deterministic(self):
        config = load_config("rec2")
        first = rollout_trace(config, parse_policy_spec("self"), CostMode(dense=True))
        second = rollout_trace(config, parse_policy_spec("self"), CostMode(dense=True))
        assert first == second
        assert first["layout"][-1] == "last_dense_reward"

    def test_seeded_trace_differs_from_noise_free(self):
        config = load_config("rec2")
        base = rollout_trace(config, parse_policy_spec("self"))
        noisy = rollout_trace(config, parse_policy_spec("self"), seed=5)
        assert base["observations"] != noisy["observations"]

    def test_rewards_match_evaluation_return(self):
        """Undiscounted trace rewards discount-summed equal the estimate."""
        config = load_config("rec2")
        trace = rollout_trace(config, parse_policy_spec("rec"), seed=9)
        gamma = config.grid.discount
        total = sum(
            gamma**t * reward for t, reward in enumerate(trace["rewards"])
        )
        scenario = sample_sequence(config, scenario_params(config, 9))
        policy = make_policy(config, parse_policy_spec("rec"))
        value = discounted_return(config, policy, scenario, config.grid.horizon)
        assert abs(total - value) < 1e-9
