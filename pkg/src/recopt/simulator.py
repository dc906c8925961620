"""Community POMDP simulator: state transitions and cost signals.

The simulator advances a community state one step at a time.  Each step
nets the uncontrolled member flows against the battery actions, stores
the result in the per-market-period meters, updates the batteries and
advances the market and billing counters.  Costs are optimally
reallocated community bills: the full bill when a billing period
completes, intermediate bills when a market period completes (dense
mode), zero elsewhere.  Retail cost variants zero the peak prices inside
the billed objective.  Costs are positive amounts; evaluation and the
environment server negate them into rewards.

Units: member flows and battery powers in kW, meters and storage in kWh,
costs in euro.  An action is a signed battery power vector (one entry
per battery, positive = charging).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .billing import optimal_reallocation
from .domain import MeterMatrix, RecConfig
from .exogenous import ExogenousSequence

# Bump when the observation layout changes; served over the wire protocol.
OBSERVATION_VERSION = 1

# Slack allowed when checking that a caller's action is admissible.
_ACTION_TOLERANCE = 1e-7


@dataclass(frozen=True)
class Exogenous:
    """Uncontrolled per-member flows for one step, kW.

    consumption[m] and production[m] are the netted demand and generation
    of member m's non-controllable assets; at most one of them is nonzero
    per member.
    """

    consumption: np.ndarray
    production: np.ndarray

    def __post_init__(self):
        cons = np.asarray(self.consumption, dtype=float)
        prod = np.asarray(self.production, dtype=float)
        object.__setattr__(self, "consumption", cons)
        object.__setattr__(self, "production", prod)
        if cons.ndim != 1 or prod.shape != cons.shape:
            raise ValueError("consumption and production must share a (M,) shape")
        if not (np.all(np.isfinite(cons)) and np.all(np.isfinite(prod))):
            raise ValueError("flows must be finite")
        if np.any(cons < 0.0) or np.any(prod < 0.0):
            raise ValueError("flows must be >= 0")
        if np.any(np.minimum(cons, prod) != 0.0):
            raise ValueError("per-member consumption and production must be netted")

    @property
    def member_count(self) -> int:
        return self.consumption.shape[0]


@dataclass(frozen=True)
class CostMode:
    """Cost signal variant.

    dense adds intermediate bills at market period ends; retail zeroes the
    peak prices inside the billed objective.  The default is the sparse
    full-price signal.
    """

    dense: bool = False
    retail: bool = False


@dataclass(frozen=True)
class SimState:
    """Simulator state between steps.

    step_in_market counts steps into the current market period and sits at
    its maximum exactly when a market period has just completed; likewise
    market_in_billing counts completed market periods and sits at its
    maximum when a billing period has just completed.  meters accumulate
    the current billing period; soc is the stored energy per battery, kWh.
    """

    step_in_market: int
    market_in_billing: int
    soc: np.ndarray
    meters: MeterMatrix
    t: int

    def __post_init__(self):
        soc = np.asarray(self.soc, dtype=float)
        object.__setattr__(self, "soc", soc)
        for label in ("step_in_market", "market_in_billing", "t"):
            value = getattr(self, label)
            if int(value) != value or value < 0:
                raise ValueError(f"{label} must be a nonnegative integer, got {value}")
            object.__setattr__(self, label, int(value))
        if soc.ndim != 1:
            raise ValueError("soc must be a 1-d array")
        if not np.all(np.isfinite(soc)) or np.any(soc < 0.0):
            raise ValueError("soc must be finite and >= 0")


def _validate_state(config: RecConfig, state: SimState) -> None:
    grid = config.grid
    if state.step_in_market > grid.steps_per_market:
        raise ValueError(
            f"step_in_market {state.step_in_market} exceeds "
            f"{grid.steps_per_market}"
        )
    if state.market_in_billing > grid.markets_per_billing:
        raise ValueError(
            f"market_in_billing {state.market_in_billing} exceeds "
            f"{grid.markets_per_billing}"
        )
    if state.soc.shape[0] != config.battery_count:
        raise ValueError(
            f"state has {state.soc.shape[0]} batteries, config defines "
            f"{config.battery_count}"
        )
    for spec, level in zip(config.batteries, state.soc):
        if level > spec.capacity_kwh + 1e-9:
            raise ValueError(f"soc {level} exceeds capacity {spec.capacity_kwh}")
    meters = state.meters
    if meters.member_count != config.member_count:
        raise ValueError(
            f"meters cover {meters.member_count} members, config defines "
            f"{config.member_count}"
        )
    if meters.period_count != grid.markets_per_billing:
        raise ValueError(
            f"meters span {meters.period_count} market periods, expected "
            f"{grid.markets_per_billing}"
        )
    if meters.steps_in_billing != steps_elapsed(config, state):
        raise ValueError(
            f"meters record {meters.steps_in_billing} steps but the counters "
            f"imply {steps_elapsed(config, state)}"
        )


def steps_elapsed(config: RecConfig, state: SimState) -> int:
    """Steps elapsed in the current billing period, from the counters."""
    grid = config.grid
    if state.market_in_billing == grid.markets_per_billing:
        return grid.steps_per_billing
    if state.step_in_market == grid.steps_per_market:
        return state.market_in_billing * grid.steps_per_market
    return state.market_in_billing * grid.steps_per_market + state.step_in_market


def at_market_end(config: RecConfig, state: SimState) -> bool:
    """True when a market period has just completed."""
    return state.step_in_market == config.grid.steps_per_market


def at_billing_end(config: RecConfig, state: SimState) -> bool:
    """True when a billing period has just completed."""
    return (
        state.step_in_market == config.grid.steps_per_market
        and state.market_in_billing == config.grid.markets_per_billing
    )


def initial_state(config: RecConfig) -> SimState:
    """Episode start: zero counters and meters, batteries half charged."""
    members = config.member_count
    periods = config.grid.markets_per_billing
    meters = MeterMatrix(
        consumption=np.zeros((members, periods)),
        production=np.zeros((members, periods)),
        periods_elapsed=0,
        steps_in_billing=0,
    )
    soc = np.array([spec.capacity_kwh / 2.0 for spec in config.batteries])
    return SimState(
        step_in_market=0, market_in_billing=0, soc=soc, meters=meters, t=0
    )


def action_bounds(config: RecConfig, soc) -> tuple[np.ndarray, np.ndarray]:
    """Admissible signed power range per battery at the given storage level.

    The lower bound combines the discharge power limit with the energy
    still stored; the upper bound combines the charge power limit with the
    remaining headroom.  Both always bracket zero.
    """
    soc = np.asarray(soc, dtype=float)
    if soc.shape != (config.battery_count,):
        raise ValueError(
            f"soc must have shape ({config.battery_count},), got {soc.shape}"
        )
    delta = config.grid.step_hours
    lower = np.empty(config.battery_count)
    upper = np.empty(config.battery_count)
    for b, spec in enumerate(config.batteries):
        # Keep the next state of charge inside [0, capacity].
        lower[b] = max(-spec.max_discharge_kw, -soc[b] * spec.eff_discharge / delta)
        upper[b] = min(
            spec.max_charge_kw,
            (spec.capacity_kwh - soc[b]) / (delta * spec.eff_charge),
        )
    return lower, upper


def admissible(config: RecConfig, state: SimState, action) -> np.ndarray:
    """Project an action onto the admissible set of the given state."""
    act = np.asarray(action, dtype=float)
    if act.shape != (config.battery_count,):
        raise ValueError(
            f"action must have shape ({config.battery_count},), got {act.shape}"
        )
    if not np.all(np.isfinite(act)):
        raise ValueError("action must be finite")
    lower, upper = action_bounds(config, state.soc)
    return np.clip(act, lower, upper)


def exogenous_at(sequence: ExogenousSequence, t: int) -> Exogenous:
    """Per-step view into a sampled scenario sequence."""
    if not 0 <= t < sequence.step_count:
        raise ValueError(
            f"step {t} outside the {sequence.step_count} sampled steps"
        )
    return Exogenous(
        consumption=sequence.consumption[t].copy(),
        production=sequence.production[t].copy(),
    )


def step(
    config: RecConfig,
    state: SimState,
    exo: Exogenous,
    action,
    mode: CostMode = CostMode(),
) -> tuple[SimState, float]:
    """Advance the simulator one step.

    Parameters
    ----------
    config : RecConfig
        Community the state belongs to.
    state : SimState
        Current state; meters are reset first when it closes a billing
        period.
    exo : Exogenous
        Uncontrolled flows applied during this step, kW.
    action : array-like
        Signed battery power per battery, kW.  Must already be admissible
        (see `admissible`); inadmissible actions raise ValueError.
    mode : CostMode
        Cost signal variant.

    Returns
    -------
    (SimState, float)
        The next state and the cost incurred on arrival: the optimally
        reallocated community bill when a billing period completes, an
        intermediate bill when a market period completes in dense mode,
        zero otherwise.
    """
    _validate_state(config, state)
    if exo.member_count != config.member_count:
        raise ValueError(
            f"exogenous flows cover {exo.member_count} members, config "
            f"defines {config.member_count}"
        )
    act = np.asarray(action, dtype=float)
    if act.shape != (config.battery_count,):
        raise ValueError(
            f"action must have shape ({config.battery_count},), got {act.shape}"
        )
    lower, upper = action_bounds(config, state.soc)
    if np.any(act < lower - _ACTION_TOLERANCE) or np.any(
        act > upper + _ACTION_TOLERANCE
    ):
        raise ValueError(
            f"inadmissible action {act}: bounds [{lower}, {upper}]; "
            f"project with admissible() first"
        )
    act = np.clip(act, lower, upper)
    grid = config.grid
    delta = grid.step_hours

    # Battery energy drawn at (positive) or fed into (negative) the meter.
    charge = np.maximum(act, 0.0)
    discharge = np.maximum(-act, 0.0)
    battery_energy = np.zeros(config.member_count)
    stored = state.soc.copy()
    for b, spec in enumerate(config.batteries):
        battery_energy[spec.owner] += delta * act[b]
        stored[b] += delta * (
            spec.eff_charge * charge[b] - discharge[b] / spec.eff_discharge
        )
        stored[b] = min(max(stored[b], 0.0), spec.capacity_kwh)

    # Net flow at each member's meter for this step, kWh; l+ and l- are
    # complementary by construction.
    net = delta * (exo.consumption - exo.production) + battery_energy
    offtake = np.maximum(net, 0.0)
    injection = np.maximum(-net, 0.0)

    reset = state.market_in_billing == grid.markets_per_billing
    if reset:
        consumption = np.zeros_like(state.meters.consumption)
        production = np.zeros_like(state.meters.production)
        period = 0
        steps = 1
    else:
        consumption = state.meters.consumption.copy()
        production = state.meters.production.copy()
        period = state.market_in_billing
        steps = state.meters.steps_in_billing + 1
    consumption[:, period] += offtake
    production[:, period] += injection

    step_in_market = 1 if state.step_in_market == grid.steps_per_market else (
        state.step_in_market + 1
    )
    market_in_billing = (0 if reset else state.market_in_billing) + (
        1 if step_in_market == grid.steps_per_market else 0
    )
    meters = MeterMatrix(
        consumption=consumption,
        production=production,
        periods_elapsed=-(-steps // grid.steps_per_market),
        steps_in_billing=steps,
    )
    next_state = SimState(
        step_in_market=step_in_market,
        market_in_billing=market_in_billing,
        soc=stored,
        meters=meters,
        t=state.t + 1,
    )

    cost = 0.0
    if at_market_end(config, next_state):
        if mode.dense or at_billing_end(config, next_state):
            cost = dense_increment(config, next_state, retail=mode.retail)
    return next_state, cost


def dense_increment(config: RecConfig, state: SimState, *, retail: bool = False) -> float:
    """Optimally reallocated community bill for the billing period so far.

    Only defined when a market period has just completed.  The bill covers
    the elapsed market periods, with the peak terms scaled by the elapsed
    fraction of the billing period; when the billing period has completed
    this is the full community bill.
    """
    _validate_state(config, state)
    if not at_market_end(config, state):
        raise ValueError("intermediate bills exist only at market period ends")
    tau = steps_elapsed(config, state) / config.grid.steps_per_billing
    tariffs = config.tariffs.without_peak_prices() if retail else config.tariffs
    return optimal_reallocation(state.meters, tariffs, tau=tau).objective


def observation_layout(config: RecConfig, mode: CostMode = CostMode()) -> tuple[str, ...]:
    """Names of the observation vector entries, in order."""
    labels = ["step_in_market", "market_in_billing"]
    labels += [f"soc_b{b + 1}" for b in range(config.battery_count)]
    labels += [f"net_meter_m{m + 1}" for m in range(config.member_count)]
    labels += [f"net_flow_m{m + 1}" for m in range(config.member_count)]
    if mode.dense:
        labels.append("last_dense_reward")
    return tuple(labels)


def observation(
    config: RecConfig,
    state: SimState,
    exo: Exogenous,
    mode: CostMode = CostMode(),
    last_dense_reward: float = 0.0,
) -> np.ndarray:
    """Observation vector for a state and the flows of the upcoming step.

    Layout: the two period counters, the state of charge per battery, each
    member's net meter reading (consumption minus production, kWh) of the
    market period holding the most recent flows, each member's net
    uncontrolled flow for the upcoming step (kW), and, in dense mode, the
    last intermediate reward of the current billing period.
    """
    _validate_state(config, state)
    if exo.member_count != config.member_count:
        raise ValueError(
            f"exogenous flows cover {exo.member_count} members, config "
            f"defines {config.member_count}"
        )
    period = state.market_in_billing
    if state.step_in_market == config.grid.steps_per_market:
        period -= 1
    net_meter = state.meters.consumption[:, period] - state.meters.production[:, period]
    net_flow = exo.consumption - exo.production
    parts = [
        np.array([float(state.step_in_market), float(state.market_in_billing)]),
        state.soc,
        net_meter,
        net_flow,
    ]
    if mode.dense:
        parts.append(np.array([float(last_dense_reward)]))
    return np.concatenate(parts)
