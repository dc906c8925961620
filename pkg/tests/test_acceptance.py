"""End-to-end acceptance checks at published tolerances and time budgets.

Every test here asserts one published acceptance criterion exactly as
stated, with an explicit wall-clock budget.  Two reference sub-checks are
expected to fail: with the two-decimal published inputs the exact
community optima sit at 2024.3921 and 3068.4613 (pinned in
tests/test_billing.py, verified with an independent solver and exact
rational arithmetic), outside the published +-0.01 windows around 2024.38
and 3068.45.  Those two tests stay red deliberately instead of widening
the tolerance.
"""

import time
from contextlib import contextmanager

import numpy as np

from recopt import billing, simulator
from recopt.domain import MeterMatrix, Tariffs, load_config
from recopt.evaluate import ExperimentPlan, evaluate, render_csv
from recopt.exogenous import (
    ExogenousSequence,
    sample_red_noise,
    sample_sequence,
    scenario_params,
)
from recopt.policies import PolicySpec, mpc_action, parse_policy_spec
from recopt.simulator import CostMode


@contextmanager
def budget(seconds):
    """Assert the enclosed block finishes within the wall-clock budget."""
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"finished in {elapsed:.2f}s, budget {seconds:.0f}s"


def meters_from_net(net):
    """Meters from signed net consumption (negative = net production)."""
    net = np.asarray(net, dtype=float)
    return MeterMatrix.full(np.maximum(net, 0.0), np.maximum(-net, 0.0))


def two_member_tariffs():
    return Tariffs(
        buy=[0.20, 0.22],
        sell=[0.04, 0.05],
        offtake_peak=1.0,
        injection_peak=1.0,
        rec_buy_fee=0.02,
        rec_sell_fee=0.03,
    )


def three_member_tariffs(offtake_peak, injection_peak):
    return Tariffs(
        buy=[0.20, 0.22, 0.24],
        sell=[0.04, 0.05, 0.06],
        offtake_peak=offtake_peak,
        injection_peak=injection_peak,
        rec_buy_fee=0.02,
        rec_sell_fee=0.03,
    )


TWO_MEMBER_NET = [[252.59, 811.43], [-596.18, -244.02]]
THREE_MEMBER_NET_NO_PEAKS = [
    [368.10, 486.34],
    [-608.36, 186.40],
    [-564.67, -162.35],
]
THREE_MEMBER_NET_PEAKS = [
    [-642.66, -666.00, 232.98, -538.31],
    [644.85, 142.05, -111.48, 542.80],
    [748.11, -150.40, 813.45, -579.49],
]


def random_instance(rng, members, periods):
    """Random meters and strictly positive tariffs with profitable exchanges.

    Prices are drawn so that min(buy) - fees - max(sell) stays > 0, the
    regime in which the greedy allocation is optimal.
    """
    net = rng.uniform(-40.0, 40.0, size=(members, periods))
    net[rng.uniform(size=net.shape) < 0.2] = 0.0
    tariffs = Tariffs(
        buy=rng.uniform(0.15, 0.30, size=members),
        sell=rng.uniform(0.03, 0.08, size=members),
        offtake_peak=float(rng.uniform(0.0, 2.0)),
        injection_peak=float(rng.uniform(0.0, 2.0)),
        rec_buy_fee=float(rng.uniform(0.0, 0.03)),
        rec_sell_fee=float(rng.uniform(0.0, 0.02)),
    )
    return meters_from_net(net), tariffs


class TestReferenceReallocations:
    """Reference billing values reproduced at the published tolerances."""

    def test_two_member_bills_and_peaks(self):
        with budget(1.0):
            meters = meters_from_net(TWO_MEMBER_NET)
            tariffs = two_member_tariffs()
            no_rec = billing.bill_no_rec(meters, tariffs)
            result = billing.optimal_reallocation(meters, tariffs)
        assert abs(no_rec.sum() - 1578.40) < 0.01
        assert abs(result.global_bill - 1032.13) < 0.01
        assert abs(result.offtake_peak[0] - 567.41) < 0.01
        assert abs(result.injection_peak[1] - 343.59) < 0.01

    def test_three_member_no_peak_totals_and_allocations(self):
        with budget(1.0):
            meters = meters_from_net(THREE_MEMBER_NET_NO_PEAKS)
            tariffs = three_member_tariffs(0.0, 0.0)
            greedy = billing.greedy_no_peak(meters, tariffs)
            relaxed = billing.optimal_reallocation(meters, tariffs, include_peaks=False)
        assert abs(greedy.global_bill - 83.19) < 0.01
        assert abs(relaxed.global_bill - 83.19) < 0.01
        assert np.allclose(greedy.alloc_to_member, relaxed.alloc_to_member, atol=0.01)
        assert np.allclose(greedy.alloc_from_member, relaxed.alloc_from_member, atol=0.01)

    def test_three_member_peak_aware_total(self):
        """Expected to fail: the exact optimum for these inputs is 2024.3921.

        The two-decimal reference inputs cannot reproduce the published
        2024.38 within 0.01; tests/test_billing.py pins the exact value.
        This check keeps the published tolerance rather than widening it.
        """
        with budget(5.0):
            meters = meters_from_net(THREE_MEMBER_NET_PEAKS)
            aware = billing.optimal_reallocation(meters, three_member_tariffs(1.0, 1.0))
        assert abs(aware.global_bill - 2024.38) < 0.01

    def test_three_member_peak_ignoring_rebilled_total(self):
        """Expected to fail: the exact re-billed total for these inputs is 3068.4613.

        The two-decimal reference inputs cannot reproduce the published
        3068.45 within 0.01; tests/test_billing.py pins the exact value.
        This check keeps the published tolerance rather than widening it.
        """
        with budget(5.0):
            meters = meters_from_net(THREE_MEMBER_NET_PEAKS)
            tariffs = three_member_tariffs(1.0, 1.0)
            ignoring = billing.optimal_reallocation(meters, tariffs, include_peaks=False)
        assert abs(ignoring.global_bill - 3068.45) < 0.01

    def test_three_member_no_community_total(self):
        with budget(5.0):
            meters = meters_from_net(THREE_MEMBER_NET_PEAKS)
            bills = billing.bill_no_rec(meters, three_member_tariffs(1.0, 1.0))
        assert abs(bills.sum() - 3638.90) < 0.01


class TestRandomizedReallocationOracles:
    """Closed-form allocators agree with the LP on random instances."""

    def test_greedy_and_two_member_forms_match_lp(self):
        rng = np.random.default_rng(987654321)
        two_member_checked = 0
        with budget(30.0):
            for trial in range(140):
                members = 2 if trial % 3 == 0 else int(rng.integers(1, 4))
                periods = int(rng.integers(1, 5))
                meters, tariffs = random_instance(rng, members, periods)
                relaxed = billing.optimal_reallocation(
                    meters, tariffs, include_peaks=False
                )
                greedy = billing.greedy_no_peak(meters, tariffs)
                assert abs(greedy.objective - relaxed.objective) < 1e-6
                if members == 2:
                    closed = billing.two_member_reallocation(meters, tariffs)
                    assert abs(closed.objective - relaxed.objective) < 1e-6
                    two_member_checked += 1
        assert two_member_checked >= 40


class TestPlannerOneStepOracle:
    """A one-step plan with an exact forecast matches brute-force search."""

    def test_single_step_plan_matches_grid_search(self):
        config = load_config("rec2")
        assert config.battery_count == 1
        grid_spec = config.grid
        spec = PolicySpec(kind="mpc", horizon=1, foresight_alpha=1.0)
        dense = CostMode(dense=True)
        rng = np.random.default_rng(24680)
        checked = 0
        with budget(60.0):
            for seed in (7, 8):
                scenario = sample_sequence(config, scenario_params(config, seed))
                state = simulator.initial_state(config)
                per_seed = 0
                for _ in range(grid_spec.horizon - 1):
                    exo = simulator.exogenous_at(scenario, state.t)
                    next_in_market = (
                        1
                        if state.step_in_market == grid_spec.steps_per_market
                        else state.step_in_market + 1
                    )
                    if (
                        next_in_market == grid_spec.steps_per_market
                        and per_seed < 10
                    ):
                        forecast = ExogenousSequence(
                            consumption=scenario.consumption[state.t:state.t + 1],
                            production=scenario.production[state.t:state.t + 1],
                        )
                        planned = mpc_action(config, state, forecast, spec)
                        _, planned_cost = simulator.step(
                            config, state, exo, planned, dense
                        )
                        lower, upper = simulator.action_bounds(config, state.soc)
                        points = int(np.ceil((upper[0] - lower[0]) / 0.001)) + 1
                        search = np.linspace(lower[0], upper[0], max(points, 2))
                        best = min(
                            simulator.step(config, state, exo, np.array([u]), dense)[1]
                            for u in search
                        )
                        # One 0.001 kW grid cell of cost slack.
                        assert planned_cost <= best + 2e-3
                        per_seed += 1
                        checked += 1
                    lower, upper = simulator.action_bounds(config, state.soc)
                    state, _ = simulator.step(
                        config, state, exo, rng.uniform(lower, upper)
                    )
        assert checked == 20


def _ordering_means(plan):
    estimates = evaluate(plan)
    means = {}
    for estimate in estimates:
        assert estimate.error is None, f"{estimate.policy}: {estimate.error}"
        means[estimate.policy] = estimate.mean_return
    return means


def _assert_ordering(means):
    """Published ordering clauses on shared-scenario mean returns."""
    planning = {k: v for k, v in means.items() if k.startswith("mpc:")}
    assert planning
    baseline_floor = min(means["rec"], means["self"])
    for label, value in planning.items():
        assert means["opt"] >= value, f"opt fell below {label}"
        assert value >= baseline_floor, f"{label} fell below both baselines"
    assert means["opt-retail"] <= means["opt"]
    worst_other = min(v for k, v in means.items() if k != "self")
    assert means["self"] < worst_other


class TestClosedLoopPolicyOrdering:
    """Mean returns over shared scenarios respect the published ordering."""

    def test_two_member_policy_ordering(self):
        plan = ExperimentPlan(
            config="rec2",
            policies=tuple(
                parse_policy_spec(text)
                for text in (
                    "opt",
                    "opt-retail",
                    "mpc:K=12,alpha=0.85",
                    "mpc:K=12,alpha=0.5",
                    "mpc:K=4,alpha=0.85",
                    "mpc:K=4,alpha=0.5",
                    "rec",
                    "self",
                )
            ),
            scenarios=64,
            seeds=(0,),
        )
        with budget(900.0):
            means = _ordering_means(plan)
        _assert_ordering(means)

    def test_seven_member_desk_policy_ordering(self):
        plan = ExperimentPlan(
            config="rec7-desk",
            policies=tuple(
                parse_policy_spec(text)
                for text in (
                    "opt",
                    "opt-retail",
                    "mpc:K=5,alpha=0.85",
                    "mpc:K=5,alpha=0.5",
                    "rec",
                    "self",
                )
            ),
            scenarios=16,
            seeds=(0,),
        )
        with budget(900.0):
            means = _ordering_means(plan)
        _assert_ordering(means)


def _run_invariant_steps(name, steps, seed):
    """Drive random admissible actions and check every step invariant."""
    config = load_config(name)
    grid = config.grid
    spm, mpb = grid.steps_per_market, grid.markets_per_billing
    capacity = np.array([spec.capacity_kwh for spec in config.batteries])
    rng = np.random.default_rng(seed)
    dense = CostMode(dense=True)
    state = simulator.initial_state(config)
    scenario = sample_sequence(config, scenario_params(config, int(rng.integers(2**31))))
    done = 0
    while done < steps:
        if state.t == scenario.step_count:
            state = simulator.initial_state(config)
            scenario = sample_sequence(
                config, scenario_params(config, int(rng.integers(2**31)))
            )
        exo = simulator.exogenous_at(scenario, state.t)
        lower, upper = simulator.action_bounds(config, state.soc)
        action = rng.uniform(lower, upper)
        nxt, sparse_cost = simulator.step(config, state, exo, action)
        dense_next, dense_cost = simulator.step(config, state, exo, action, dense)

        # Counter automaton.
        reset = state.market_in_billing == mpb
        expected_step = 1 if state.step_in_market == spm else state.step_in_market + 1
        expected_market = (0 if reset else state.market_in_billing) + (
            1 if expected_step == spm else 0
        )
        assert nxt.step_in_market == expected_step
        assert nxt.market_in_billing == expected_market
        assert 1 <= nxt.step_in_market <= spm
        assert 0 <= nxt.market_in_billing <= mpb
        assert nxt.t == state.t + 1
        market_end = expected_step == spm
        assert simulator.at_market_end(config, nxt) == market_end
        assert simulator.at_billing_end(config, nxt) == (
            market_end and expected_market == mpb
        )

        # Stored energy stays inside the physical bounds.
        assert np.all(nxt.soc >= -1e-9)
        assert np.all(nxt.soc <= capacity + 1e-9)

        # Per-step meter increments are netted per member.
        period = 0 if reset else state.market_in_billing
        if reset:
            base_cons = np.zeros(config.member_count)
            base_prod = np.zeros(config.member_count)
        else:
            base_cons = state.meters.consumption[:, period]
            base_prod = state.meters.production[:, period]
        d_cons = nxt.meters.consumption[:, period] - base_cons
        d_prod = nxt.meters.production[:, period] - base_prod
        assert np.all(d_cons >= -1e-12)
        assert np.all(d_prod >= -1e-12)
        assert np.all(d_cons * d_prod <= 1e-15)

        # Energy accounting at the meters and inside the batteries.
        delta = grid.step_hours
        battery_energy = np.zeros(config.member_count)
        expected_soc = state.soc.copy()
        for b, spec in enumerate(config.batteries):
            battery_energy[spec.owner] += delta * action[b]
            expected_soc[b] += delta * (
                spec.eff_charge * max(action[b], 0.0)
                - max(-action[b], 0.0) / spec.eff_discharge
            )
        net = delta * (exo.consumption - exo.production) + battery_energy
        assert np.allclose(d_cons - d_prod, net, atol=1e-9)
        assert np.allclose(nxt.soc, np.clip(expected_soc, 0.0, capacity), atol=1e-7)

        # Cost channel: zero off period ends, and the dense and sparse
        # signals coincide when the billing period completes.
        assert np.allclose(dense_next.soc, nxt.soc)
        assert np.array_equal(dense_next.meters.consumption, nxt.meters.consumption)
        if simulator.at_billing_end(config, nxt):
            assert abs(dense_cost - sparse_cost) < 1e-9
        elif simulator.at_market_end(config, nxt):
            assert sparse_cost == 0.0
        else:
            assert sparse_cost == 0.0
            assert dense_cost == 0.0

        state = nxt
        done += 1
    return done


class TestSimulatorStepInvariants:
    """Counter, storage, netting and cost invariants over random rollouts."""

    def test_invariants_hold_over_ten_thousand_random_steps(self):
        with budget(60.0):
            checked = _run_invariant_steps("rec2", 6000, 13579)
            checked += _run_invariant_steps("rec7-desk", 4000, 24601)
        assert checked >= 10_000


class TestExogenousNoiseStatistics:
    """Sampled red noise reproduces the target moments."""

    def test_red_noise_matches_target_moments(self):
        with budget(10.0):
            rng = np.random.default_rng(0)
            series = sample_red_noise(rng, 100_000, 0.5, 0.3)
        lag1 = np.corrcoef(series[:-1], series[1:])[0, 1]
        assert abs(lag1 - 0.5) <= 0.05
        assert abs(series.var() - 0.09) <= 0.009


class TestEvaluationDeterminism:
    """Identical plans and seeds render bit-identical evaluation CSVs."""

    def test_identical_plans_render_identical_csv(self):
        def run():
            plan = ExperimentPlan(
                config="rec2",
                policies=tuple(
                    parse_policy_spec(text)
                    for text in ("rec", "self", "mpc:K=3,alpha=0.85")
                ),
                scenarios=2,
                seeds=(0, 1),
                horizon=24,
            )
            return render_csv(plan, evaluate(plan))

        first = run()
        second = run()
        assert first == second
        assert first.encode("utf-8") == second.encode("utf-8")
