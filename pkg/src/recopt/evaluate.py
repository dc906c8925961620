"""Policy evaluation: scenario grids, return estimates and result files.

Each evaluation seed derives one noise stream per scenario, and every
policy in a plan faces the same scenarios (common random numbers), so
differences between return estimates come from the policies alone.
Outputs are written with shortest round-trip floats and sorted keys,
making repeated runs of the same plan byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .domain import RecConfig, load_config
from .envserver import Episode
from .exogenous import ExogenousSequence, sample_sequence, scenario_params
from .policies import PolicySpec, make_policy
from .simulator import (
    OBSERVATION_VERSION,
    CostMode,
    exogenous_at,
    initial_state,
    observation_layout,
    step,
)


@dataclass(frozen=True)
class ExperimentPlan:
    """A reproducible evaluation: who plays, on what, for how long.

    scenarios counts independent noise streams per seed; horizon
    defaults to the full run length of the config.
    """

    config: str
    policies: tuple[PolicySpec, ...]
    scenarios: int = 1
    seeds: tuple[int, ...] = (0,)
    horizon: int | None = None
    out_dir: str | None = None
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.policies:
            raise ValueError("plan needs at least one policy")
        labels = [spec.label() for spec in self.policies]
        if len(set(labels)) != len(labels):
            raise ValueError(f"policy labels must be distinct, got {labels}")
        if not isinstance(self.scenarios, int) or self.scenarios < 1:
            raise ValueError(f"scenarios must be a positive integer, got {self.scenarios}")
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        for seed in self.seeds:
            if not isinstance(seed, int) or seed < 0:
                raise ValueError(f"seeds must be nonnegative integers, got {seed!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if self.horizon is not None:
            if not isinstance(self.horizon, int) or self.horizon < 1:
                raise ValueError(f"horizon must be a positive integer, got {self.horizon}")

    def labels(self) -> tuple[str, ...]:
        return tuple(spec.label() for spec in self.policies)


@dataclass(frozen=True)
class ReturnEstimate:
    """Discounted-return summary for one policy across seeds."""

    policy: str
    mean_return: float | None
    standard_error: float | None
    per_seed_returns: tuple[float, ...]
    error: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "per_seed_returns", tuple(self.per_seed_returns))
        if self.error is not None:
            return
        if not self.per_seed_returns:
            raise ValueError("an estimate without an error needs returns")
        mean = sum(self.per_seed_returns) / len(self.per_seed_returns)
        if not math.isclose(self.mean_return, mean, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError(
                f"mean_return {self.mean_return} is not the average of the "
                f"per-seed returns ({mean})"
            )


def _scenario_seeds(seed: int, count: int) -> list[int]:
    """Derive per-scenario noise seeds from one evaluation seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return [int(v) for v in rng.integers(0, 2**63, size=count)]


def _resolve_horizon(plan: ExperimentPlan, config: RecConfig) -> int:
    horizon = config.grid.horizon if plan.horizon is None else plan.horizon
    if horizon > config.grid.horizon:
        raise ValueError(
            f"horizon {horizon} exceeds the config run length {config.grid.horizon}"
        )
    return horizon


def _scenario_grid(plan: ExperimentPlan, config: RecConfig) -> list[list[ExogenousSequence]]:
    """Sampled scenarios per seed, shared by every policy in the plan."""
    grid = []
    for seed in plan.seeds:
        streams = _scenario_seeds(seed, plan.scenarios)
        grid.append([
            sample_sequence(config, scenario_params(config, stream))
            for stream in streams
        ])
    return grid


def discounted_return(config: RecConfig, policy, scenario: ExogenousSequence,
                      horizon: int) -> float:
    """Roll the policy through one scenario; negated discounted cost."""
    policy.reset(scenario)
    state = initial_state(config)
    gamma = config.grid.discount
    total = 0.0
    for t in range(horizon):
        exo = exogenous_at(scenario, t)
        action = policy.action(state, exo)
        state, cost = step(config, state, exo, action)
        total -= gamma**t * cost
    return total


def evaluate(plan: ExperimentPlan) -> list[ReturnEstimate]:
    """Return estimates for every policy of the plan, in plan order.

    A policy that fails anywhere yields an estimate carrying the error
    instead of numbers; the remaining policies still run on the same
    scenarios.
    """
    config = load_config(plan.config)
    horizon = _resolve_horizon(plan, config)
    grid = _scenario_grid(plan, config)
    estimates = []
    for spec in plan.policies:
        label = spec.label()
        try:
            policy = make_policy(config, spec)
            per_seed = []
            for scenarios in grid:
                returns = [
                    discounted_return(config, policy, scenario, horizon)
                    for scenario in scenarios
                ]
                per_seed.append(sum(returns) / len(returns))
        except (ValueError, RuntimeError) as error:
            estimates.append(ReturnEstimate(
                policy=label, mean_return=None, standard_error=None,
                per_seed_returns=(), error=str(error),
            ))
            continue
        mean = sum(per_seed) / len(per_seed)
        if len(per_seed) > 1:
            spread = np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))
        else:
            spread = 0.0
        estimates.append(ReturnEstimate(
            policy=label, mean_return=mean, standard_error=float(spread),
            per_seed_returns=tuple(per_seed),
        ))
    return estimates


def time_policies(plan: ExperimentPlan, calls: int = 32) -> dict[str, float]:
    """Mean wall-clock seconds per action call along one rollout.

    Policies that cannot run (or fail mid-rollout) time out as nan.
    """
    config = load_config(plan.config)
    horizon = _resolve_horizon(plan, config)
    calls = min(calls, horizon)
    stream = _scenario_seeds(plan.seeds[0], 1)[0]
    scenario = sample_sequence(config, scenario_params(config, stream))
    timings: dict[str, float] = {}
    for spec in plan.policies:
        label = spec.label()
        try:
            policy = make_policy(config, spec)
            policy.reset(scenario)
            state = initial_state(config)
            total = 0.0
            for t in range(calls):
                exo = exogenous_at(scenario, t)
                started = time.perf_counter()
                action = policy.action(state, exo)
                total += time.perf_counter() - started
                state, _ = step(config, state, exo, action)
            timings[label] = total / calls
        except (ValueError, RuntimeError):
            timings[label] = math.nan
    return timings


def render_csv(plan: ExperimentPlan, estimates: list[ReturnEstimate]) -> str:
    """One row per policy and seed, sorted by policy label then seed."""
    rows = []
    for estimate in estimates:
        if estimate.error is not None:
            continue
        for seed, value in zip(plan.seeds, estimate.per_seed_returns):
            rows.append((estimate.policy, seed, value))
    rows.sort(key=lambda row: (row[0], row[1]))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["policy", "seed", "return"])
    for policy, seed, value in rows:
        writer.writerow([policy, seed, repr(value)])
    return out.getvalue()


def render_summary(plan: ExperimentPlan, estimates: list[ReturnEstimate],
                   timings: dict[str, float] | None = None) -> str:
    """JSON summary of the plan and its estimates, sorted for stability."""
    results = [
        {
            "policy": estimate.policy,
            "mean_return": estimate.mean_return,
            "standard_error": estimate.standard_error,
            "per_seed_returns": list(estimate.per_seed_returns),
            "error": estimate.error,
        }
        for estimate in sorted(estimates, key=lambda e: e.policy)
    ]
    payload = {
        "config": plan.config,
        "horizon": plan.horizon,
        "scenarios": plan.scenarios,
        "seeds": list(plan.seeds),
        "results": results,
    }
    if timings is not None:
        payload["timings"] = {
            label: None if math.isnan(value) else value
            for label, value in timings.items()
        }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_results(plan: ExperimentPlan, estimates: list[ReturnEstimate],
                  out_dir, timings: dict[str, float] | None = None) -> dict[str, str]:
    """Write results.csv and summary.json under out_dir; returns the paths."""
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    csv_path = directory / "results.csv"
    csv_path.write_text(render_csv(plan, estimates))
    paths["csv"] = str(csv_path)
    summary_path = directory / "summary.json"
    summary_path.write_text(render_summary(plan, estimates, timings))
    paths["summary"] = str(summary_path)
    return paths


def rollout_trace(config: RecConfig, spec: PolicySpec,
                  mode: CostMode = CostMode(), *, seed: int | None = None) -> dict:
    """Trace one policy episode: observations, rewards and actions.

    With seed None the scenario is the noise-free base profile, the
    reference run used to fit observation and reward standardizers.
    """
    if seed is None:
        params = replace(config.noise, sigma=0.0)
    else:
        params = scenario_params(config, seed)
    scenario = sample_sequence(config, params)
    policy = make_policy(config, spec)
    policy.reset(scenario)
    episode = Episode(config, scenario, mode)
    observations = [[float(v) for v in episode.observation()]]
    rewards = []
    actions = []
    while not episode.done:
        exo = exogenous_at(scenario, episode.t)
        action = policy.action(episode.state, exo)
        obs, reward, _, _ = episode.step(action)
        observations.append([float(v) for v in obs])
        rewards.append(float(reward))
        actions.append([float(v) for v in action])
    return {
        "observation_version": OBSERVATION_VERSION,
        "layout": list(observation_layout(config, mode)),
        "policy": spec.label(),
        "mode": {"dense": mode.dense, "retail": mode.retail},
        "observations": observations,
        "rewards": rewards,
        "actions": actions,
    }
