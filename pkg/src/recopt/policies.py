"""Battery control policies: rule baselines and receding-horizon planning.

The planner builds one program per decision step: market periods of the
current billing period whose totals are already on the meters enter as
fixed quantities (their allocation is still free), upcoming steps enter
through forecast flows and battery variables, and every billing period
touched by the window contributes its bill to the objective, prorated
when the window ends before the period does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp
from .domain import RecConfig
from .exogenous import ExogenousSequence, blend_foresight
from .simulator import Exogenous, SimState, action_bounds, admissible

POLICY_KINDS = ("rec_rule", "self_rule", "mpc", "rl_external")


@dataclass(frozen=True)
class PolicySpec:
    """What to run: a rule baseline, a planning policy, or an external one.

    Attributes
    ----------
    kind : str
        One of POLICY_KINDS.
    horizon : int or None
        Planning window K in steps; None plans to the end of the run.
    foresight_alpha : float
        Forecast quality in (0, 1]; 1 means exact foresight.
    include_peaks : bool
        Keep peak costs in the planning objective; False gives the
        retail variants.
    discount : float or None
        Planning discount; None uses the config's discount.
    """

    kind: str
    horizon: int | None = None
    foresight_alpha: float = 1.0
    include_peaks: bool = True
    discount: float | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(
                f"kind must be one of {POLICY_KINDS}, got {self.kind!r}"
            )
        if self.horizon is not None:
            horizon = int(self.horizon)
            if horizon != self.horizon or horizon < 1:
                raise ValueError(
                    f"horizon must be an integer >= 1, got {self.horizon}"
                )
            if self.kind != "mpc":
                raise ValueError("horizon applies to mpc policies only")
            object.__setattr__(self, "horizon", horizon)
        alpha = float(self.foresight_alpha)
        if not 0.0 < alpha <= 1.0:
            raise ValueError(
                f"foresight_alpha must be in (0, 1], got {self.foresight_alpha}"
            )
        if alpha != 1.0 and self.kind != "mpc":
            raise ValueError("foresight_alpha applies to mpc policies only")
        object.__setattr__(self, "foresight_alpha", alpha)
        if self.discount is not None:
            discount = float(self.discount)
            if not 0.0 < discount <= 1.0:
                raise ValueError(
                    f"discount must be in (0, 1], got {self.discount}"
                )
            object.__setattr__(self, "discount", discount)

    def label(self) -> str:
        """Canonical text form, the inverse of parse_policy_spec."""
        if self.kind == "rec_rule":
            return "rec"
        if self.kind == "self_rule":
            return "self"
        if self.kind == "rl_external":
            return "rl"
        parts = []
        if self.horizon is not None:
            parts.append(f"K={self.horizon}")
        if self.foresight_alpha != 1.0:
            parts.append(f"alpha={self.foresight_alpha:g}")
        if self.discount is not None:
            parts.append(f"gamma={self.discount:g}")
        if not parts:
            return "opt" if self.include_peaks else "opt-retail"
        head = "mpc" if self.include_peaks else "mpc-retail"
        return head + ":" + ",".join(parts)


_SIMPLE_HEADS = {
    "rec": "rec_rule",
    "rec_rule": "rec_rule",
    "self": "self_rule",
    "self_rule": "self_rule",
    "rl": "rl_external",
    "rl_external": "rl_external",
}


def parse_policy_spec(text: str) -> PolicySpec:
    """Parse a descriptor like "rec", "opt-retail" or "mpc:K=12,alpha=0.85".

    mpc/mpc-retail options: K (window length), alpha (foresight quality),
    gamma (planning discount).  The -retail suffix drops peak costs from
    the planning objective.  "opt" is full-window exact-foresight mpc.
    """
    head, _, tail = text.strip().partition(":")
    head = head.strip().lower()
    options: dict[str, str] = {}
    if tail:
        for item in tail.split(","):
            key, sep, value = item.partition("=")
            key, value = key.strip().lower(), value.strip()
            if not sep or not key or not value:
                raise ValueError(f"malformed policy option {item!r} in {text!r}")
            if key in options:
                raise ValueError(f"duplicate policy option {key!r} in {text!r}")
            options[key] = value
    if head in _SIMPLE_HEADS or head in ("opt", "opt-retail"):
        if options:
            raise ValueError(f"policy {head!r} takes no options")
        if head == "opt":
            return PolicySpec(kind="mpc")
        if head == "opt-retail":
            return PolicySpec(kind="mpc", include_peaks=False)
        return PolicySpec(kind=_SIMPLE_HEADS[head])
    if head not in ("mpc", "mpc-retail"):
        raise ValueError(f"unknown policy {text!r}")
    horizon = None
    alpha = 1.0
    discount = None
    for key, value in options.items():
        if key == "k":
            horizon = int(value)
        elif key == "alpha":
            alpha = float(value)
        elif key == "gamma":
            discount = float(value)
        else:
            raise ValueError(f"unknown policy option {key!r} in {text!r}")
    return PolicySpec(kind="mpc", horizon=horizon, foresight_alpha=alpha,
                      include_peaks=head == "mpc", discount=discount)


def rule_action(config: RecConfig, state: SimState, exo: Exogenous,
                mode: str) -> np.ndarray:
    """Next action for the rule baselines.

    "rec" flattens the community net position for the current step (an LP
    minimizing the absolute community net flow over admissible battery
    powers); "self" charges every battery at the highest admissible power
    until it is full.
    """
    if mode not in ("rec", "self"):
        raise ValueError(f"mode must be 'rec' or 'self', got {mode!r}")
    if exo.member_count != config.member_count:
        raise ValueError(
            f"exogenous flows cover {exo.member_count} members, config has "
            f"{config.member_count}"
        )
    lower, upper = action_bounds(config, state.soc)
    if mode == "self":
        return admissible(config, state, upper)
    if config.battery_count == 0:
        return np.zeros(0)
    surplus = float(np.sum(exo.production - exo.consumption))
    builder = lp.ProgramBuilder("rec-rule")
    slack = builder.add_variable("l", cost=1.0)
    actions = [
        builder.add_variable(f"u{b}", lower=lower[b], upper=upper[b])
        for b in range(config.battery_count)
    ]
    # l >= |sum(u) - surplus|, the absolute community net flow
    builder.add_constraint(
        [(slack, 1.0)] + [(u, -1.0) for u in actions],
        lp.GREATER_EQUAL, -surplus, name="abs_pos")
    builder.add_constraint(
        [(slack, 1.0)] + [(u, 1.0) for u in actions],
        lp.GREATER_EQUAL, surplus, name="abs_neg")
    # tie-break toward the least total battery movement: moving the net
    # flow toward zero never costs more on l than it saves here, so ties
    # resolve without mixing charging one battery with discharging another
    for b, u in enumerate(actions):
        moved = builder.add_variable(f"a{b}", cost=1e-3)
        builder.add_constraint([(moved, 1.0), (u, -1.0)],
                               lp.GREATER_EQUAL, 0.0, name=f"abs_u{b}_pos")
        builder.add_constraint([(moved, 1.0), (u, 1.0)],
                               lp.GREATER_EQUAL, 0.0, name=f"abs_u{b}_neg")
    solution = lp.solve_lp(builder.build())
    if solution.status != "optimal":
        raise RuntimeError(f"rec rule LP ended with status {solution.status}")
    action = np.array([solution.x[u] for u in actions])
    return admissible(config, state, action)


@dataclass
class _Segment:
    """One market period of the planning window.

    steps lists the window offsets still to run (empty for market periods
    already recorded); fixed_cons and fixed_prod are the kWh already on
    the meters for this market period.
    """

    steps: list
    fixed_cons: np.ndarray
    fixed_prod: np.ndarray


@dataclass
class _Block:
    """One billing period touched by the planning window.

    end_offset counts simulator steps from now until the block's bill
    arrives; tau is the billed fraction of the billing period, 1 for a
    completed one.
    """

    segments: list
    end_offset: int
    tau: float


def _plan_timeline(config: RecConfig, state: SimState, window: int):
    """Split the next `window` steps into market segments and billing blocks.

    Mirrors the simulator's counter automaton so segment and block
    boundaries land exactly where the simulator bills.  The first block
    also carries the already-recorded market periods of the current
    billing period, and the last block is padded with stepless zero
    segments until it lists every market period of its billing period,
    so the program shape depends only on how many blocks the window
    touches and warm starts can reuse the previous basis.
    """
    grid = config.grid
    members = config.member_count
    sm, sb = state.step_in_market, state.market_in_billing
    segments: list[_Segment] = []
    blocks: list[_Block] = []
    block_segments: list[int] = []
    if sb == grid.markets_per_billing:
        seed_cons = np.zeros(members)
        seed_prod = np.zeros(members)
    else:
        for column in range(sb):
            segments.append(_Segment(
                [], state.meters.consumption[:, column].copy(),
                state.meters.production[:, column].copy()))
            block_segments.append(len(segments) - 1)
        seed_cons = state.meters.consumption[:, sb].copy()
        seed_prod = state.meters.production[:, sb].copy()
    current = _Segment([], seed_cons, seed_prod)
    for j in range(window):
        current.steps.append(j)
        sm_next = 1 if sm == grid.steps_per_market else sm + 1
        sb_next = 0 if sb == grid.markets_per_billing else sb
        if sm_next == grid.steps_per_market:
            sb_next += 1
        sm, sb = sm_next, sb_next
        market_end = sm == grid.steps_per_market
        billing_end = market_end and sb == grid.markets_per_billing
        last = j == window - 1
        if market_end or last:
            segments.append(current)
            block_segments.append(len(segments) - 1)
            if billing_end or last:
                if sb == grid.markets_per_billing:
                    elapsed = grid.steps_per_billing
                elif sm == grid.steps_per_market:
                    elapsed = sb * grid.steps_per_market
                else:
                    elapsed = sb * grid.steps_per_market + sm
                blocks.append(_Block(block_segments, j + 1,
                                     elapsed / grid.steps_per_billing))
                block_segments = []
            if not last:
                current = _Segment([], np.zeros(members), np.zeros(members))
    while len(blocks[-1].segments) < grid.markets_per_billing:
        segments.append(_Segment([], np.zeros(members), np.zeros(members)))
        blocks[-1].segments.append(len(segments) - 1)
    return segments, blocks


@dataclass
class _BatteryVars:
    """Column indices of the battery variables, keyed by (battery, step)."""

    signed: dict
    charge: dict
    discharge: dict


def _assemble(config: RecConfig, state: SimState, net_forecast: np.ndarray,
              spec: PolicySpec, pad_steps: int | None = None):
    """Build the planning program for the given forecast window.

    net_forecast holds the forecast net flow (consumption minus
    production, kW) per window step and member.  Returns the program and
    the battery variable indices for action extraction.  pad_steps keeps
    the battery block at a fixed step count when the window is shorter,
    pinning the extra steps to zero, so consecutive receding-horizon
    programs keep one shape near the end of the run.
    """
    grid, tariffs = config.grid, config.tariffs
    window, members = net_forecast.shape
    if members != config.member_count:
        raise ValueError(
            f"forecast covers {members} members, config has "
            f"{config.member_count}"
        )
    segments, blocks = _plan_timeline(config, state, window)
    gamma = grid.discount if spec.discount is None else spec.discount
    delta = grid.step_hours
    builder = lp.ProgramBuilder("planning")
    owners: dict[int, list[int]] = {}
    for b, battery in enumerate(config.batteries):
        owners.setdefault(battery.owner, []).append(b)
    steps_total = window if pad_steps is None else max(pad_steps, window)
    bat = _BatteryVars({}, {}, {})
    for b, battery in enumerate(config.batteries):
        lossless = battery.eff_charge * battery.eff_discharge == 1.0
        previous = None
        for j in range(steps_total):
            # steps past the window are pinned; they only repeat the shape
            live = j < window
            terms = []
            if lossless:
                # round-trip efficiency 1: a single signed power suffices
                index = builder.add_variable(
                    f"u{b}_{j}",
                    lower=-battery.max_discharge_kw if live else 0.0,
                    upper=battery.max_charge_kw if live else 0.0)
                bat.signed[b, j] = index
                terms.append((index, -delta))
            else:
                up = builder.add_variable(
                    f"uc{b}_{j}",
                    upper=battery.max_charge_kw if live else 0.0)
                down = builder.add_variable(
                    f"ud{b}_{j}",
                    upper=battery.max_discharge_kw if live else 0.0)
                builder.add_sos1(up, down)
                bat.charge[b, j] = up
                bat.discharge[b, j] = down
                terms.append((up, -delta * battery.eff_charge))
                terms.append((down, delta / battery.eff_discharge))
            soc = builder.add_variable(
                f"soc{b}_{j + 1}", upper=battery.capacity_kwh)
            terms.append((soc, 1.0))
            if previous is not None:
                terms.append((previous, -1.0))
            rhs = float(state.soc[b]) if previous is None else 0.0
            builder.add_constraint(terms, lp.EQUAL, rhs, name=f"soc{b}_{j}")
            previous = soc
    count_off = spec.include_peaks and tariffs.offtake_peak > 0.0
    count_inj = spec.include_peaks and tariffs.injection_peak > 0.0
    for block in blocks:
        # the bill lands on the step arriving at the block's end
        weight = gamma ** (block.end_offset - 1)
        off_peak = {}
        inj_peak = {}
        for m in range(members):
            if count_off:
                off_peak[m] = builder.add_variable(
                    f"p-b{block.end_offset}m{m}",
                    cost=weight * block.tau * tariffs.offtake_peak)
            if count_inj:
                inj_peak[m] = builder.add_variable(
                    f"p+b{block.end_offset}m{m}",
                    cost=weight * block.tau * tariffs.injection_peak)
        for seg_id in block.segments:
            seg = segments[seg_id]
            if seg.steps:
                exo_kwh = delta * net_forecast[seg.steps, :].sum(axis=0)
            else:
                exo_kwh = np.zeros(members)
            balance = []
            for m in range(members):
                fixed_net = float(seg.fixed_cons[m] - seg.fixed_prod[m])
                if m in owners:
                    # rows below cap the exchanges by the net position
                    r_off_cap = np.inf
                    r_inj_cap = np.inf
                else:
                    position = fixed_net + float(exo_kwh[m])
                    r_off_cap = max(position, 0.0)
                    r_inj_cap = max(-position, 0.0)
                g_off = builder.add_variable(
                    f"g-s{seg_id}m{m}", cost=weight * tariffs.buy[m])
                g_inj = builder.add_variable(
                    f"g+s{seg_id}m{m}", cost=-weight * tariffs.sell[m])
                # community exchanges are capped by the member's net meter
                # position per market period, as in the billing rules
                r_off = builder.add_variable(
                    f"r-s{seg_id}m{m}", upper=r_off_cap,
                    cost=weight * tariffs.rec_buy_fee)
                r_inj = builder.add_variable(
                    f"r+s{seg_id}m{m}", upper=r_inj_cap,
                    cost=weight * tariffs.rec_sell_fee)
                balance += [(r_off, 1.0), (r_inj, -1.0)]
                if m in owners:
                    # the member's upcoming net flow splits into offtake and
                    # injection, complementary by SOS1; stepless segments pin
                    # the split so every segment keeps one column pattern
                    cap = np.inf if seg.steps else 0.0
                    rest_off = builder.add_variable(f"o-s{seg_id}m{m}",
                                                    upper=cap)
                    rest_inj = builder.add_variable(f"o+s{seg_id}m{m}",
                                                    upper=cap)
                    builder.add_sos1(rest_off, rest_inj)
                    builder.add_constraint(
                        [(g_off, 1.0), (r_off, 1.0), (rest_off, -1.0)],
                        lp.EQUAL, seg.fixed_cons[m], name=f"off_s{seg_id}m{m}")
                    builder.add_constraint(
                        [(g_inj, 1.0), (r_inj, 1.0), (rest_inj, -1.0)],
                        lp.EQUAL, seg.fixed_prod[m], name=f"inj_s{seg_id}m{m}")
                    link = [(rest_off, 1.0), (rest_inj, -1.0)]
                    for b in owners[m]:
                        for j in seg.steps:
                            if (b, j) in bat.signed:
                                link.append((bat.signed[b, j], -delta))
                            else:
                                link.append((bat.charge[b, j], -delta))
                                link.append((bat.discharge[b, j], delta))
                    builder.add_constraint(
                        link, lp.EQUAL, float(exo_kwh[m]),
                        name=f"net_s{seg_id}m{m}")
                    # net-position split: the battery moves the member's
                    # period net position, and the community exchanges may
                    # not exceed its offtake respectively injection side
                    if seg.steps:
                        room = delta * len(seg.steps)
                        charge_room = room * sum(
                            config.batteries[b].max_charge_kw
                            for b in owners[m])
                        discharge_room = room * sum(
                            config.batteries[b].max_discharge_kw
                            for b in owners[m])
                        net_off_cap = max(
                            fixed_net + float(exo_kwh[m]) + charge_room, 0.0)
                        net_inj_cap = max(
                            -fixed_net - float(exo_kwh[m]) + discharge_room,
                            0.0)
                    else:
                        net_off_cap = max(fixed_net, 0.0)
                        net_inj_cap = max(-fixed_net, 0.0)
                    net_off = builder.add_variable(f"n-s{seg_id}m{m}",
                                                   upper=net_off_cap)
                    net_inj = builder.add_variable(f"n+s{seg_id}m{m}",
                                                   upper=net_inj_cap)
                    builder.add_sos1(net_off, net_inj)
                    builder.add_constraint(
                        [(net_off, 1.0), (net_inj, -1.0),
                         (rest_off, -1.0), (rest_inj, 1.0)],
                        lp.EQUAL, fixed_net, name=f"pos_s{seg_id}m{m}")
                    builder.add_constraint(
                        [(r_off, 1.0), (net_off, -1.0)],
                        lp.LESS_EQUAL, 0.0, name=f"cap-s{seg_id}m{m}")
                    builder.add_constraint(
                        [(r_inj, 1.0), (net_inj, -1.0)],
                        lp.LESS_EQUAL, 0.0, name=f"cap+s{seg_id}m{m}")
                else:
                    offtake = seg.fixed_cons[m] + max(float(exo_kwh[m]), 0.0)
                    injection = seg.fixed_prod[m] + max(-float(exo_kwh[m]), 0.0)
                    builder.add_constraint(
                        [(g_off, 1.0), (r_off, 1.0)], lp.EQUAL, offtake,
                        name=f"off_s{seg_id}m{m}")
                    builder.add_constraint(
                        [(g_inj, 1.0), (r_inj, 1.0)], lp.EQUAL, injection,
                        name=f"inj_s{seg_id}m{m}")
                if count_off:
                    builder.add_constraint(
                        [(off_peak[m], 1.0), (g_off, -1.0)],
                        lp.GREATER_EQUAL, 0.0, name=f"pk-s{seg_id}m{m}")
                if count_inj:
                    builder.add_constraint(
                        [(inj_peak[m], 1.0), (g_inj, -1.0)],
                        lp.GREATER_EQUAL, 0.0, name=f"pk+s{seg_id}m{m}")
            builder.add_constraint(balance, lp.EQUAL, 0.0,
                                   name=f"balance_s{seg_id}")
    return builder.build(), bat


def _window_actions(solution: lp.Solution, bat: _BatteryVars, window: int,
                    battery_count: int) -> np.ndarray:
    actions = np.zeros((window, battery_count))
    for (b, j), index in bat.signed.items():
        if j < window:
            actions[j, b] = solution.x[index]
    for (b, j), index in bat.charge.items():
        if j < window:
            actions[j, b] = solution.x[index] - solution.x[bat.discharge[b, j]]
    return actions


def planning_program(config: RecConfig, state: SimState,
                     forecast: ExogenousSequence,
                     spec: PolicySpec) -> lp.LinearProgram:
    """Planning program over a forecast window, for inspection or solving.

    Row j of the forecast describes step state.t + j.
    """
    if spec.kind != "mpc":
        raise ValueError(f"planning needs an mpc spec, got kind {spec.kind!r}")
    net = forecast.consumption - forecast.production
    program, _ = _assemble(config, state, net, spec)
    return program


def mpc_action(config: RecConfig, state: SimState,
               forecast: ExogenousSequence, spec: PolicySpec) -> np.ndarray:
    """Plan over the forecast window and return the first action.

    The action is projected onto the admissible set before returning.
    """
    if spec.kind != "mpc":
        raise ValueError(f"mpc_action needs an mpc spec, got kind {spec.kind!r}")
    if config.battery_count == 0:
        return np.zeros(0)
    net = forecast.consumption - forecast.production
    program, bat = _assemble(config, state, net, spec)
    solution = lp.solve_milp(program)
    if solution.status != "optimal":
        raise RuntimeError(
            f"planning solver ended with status {solution.status!r}")
    actions = _window_actions(solution, bat, net.shape[0],
                              config.battery_count)
    return admissible(config, state, actions[0])


class RulePolicy:
    """Rule baseline behind the shared policy interface."""

    def __init__(self, config: RecConfig, mode: str):
        if mode not in ("rec", "self"):
            raise ValueError(f"mode must be 'rec' or 'self', got {mode!r}")
        self._config = config
        self._mode = mode

    def reset(self, scenario: ExogenousSequence):
        """Rule baselines need no scenario information."""

    def action(self, state: SimState, exo: Exogenous) -> np.ndarray:
        return rule_action(self._config, state, exo, self._mode)


class MpcPolicy:
    """Receding-horizon planning policy.

    Re-plans at every step over the next K steps using a forecast blended
    from the sampled scenario and the base profiles.  With a full window
    and exact foresight the planning problem is solved once and the
    resulting plan replayed, which selects the same actions without
    re-solving.  Warm starts reuse the previous basis whenever the
    program shape repeats.
    """

    def __init__(self, config: RecConfig, spec: PolicySpec):
        if spec.kind != "mpc":
            raise ValueError(f"MpcPolicy needs an mpc spec, got {spec.kind!r}")
        horizon = config.grid.horizon
        self._config = config
        self._spec = spec
        self._net_base = (config.base_consumption
                          - config.base_production)[:horizon]
        self._net_true = None
        self._plan: dict[int, np.ndarray] = {}
        self._warm: dict[tuple, tuple] = {}

    def reset(self, scenario: ExogenousSequence):
        horizon = self._config.grid.horizon
        if scenario.member_count != self._config.member_count:
            raise ValueError(
                f"scenario covers {scenario.member_count} members, config "
                f"has {self._config.member_count}"
            )
        if scenario.step_count < horizon:
            raise ValueError(
                f"scenario has {scenario.step_count} steps, the run needs "
                f"{horizon}"
            )
        self._net_true = (scenario.consumption
                          - scenario.production)[:horizon]
        self._plan = {}
        self._warm = {}

    def action(self, state: SimState, exo: Exogenous) -> np.ndarray:
        if self._net_true is None:
            raise ValueError("reset(scenario) must be called before action()")
        config = self._config
        remaining = config.grid.horizon - state.t
        if remaining < 1:
            raise ValueError(
                f"step {state.t} is beyond the {config.grid.horizon}-step run"
            )
        if config.battery_count == 0:
            return np.zeros(0)
        spec = self._spec
        window = remaining if spec.horizon is None else min(spec.horizon,
                                                            remaining)
        open_loop = spec.horizon is None and spec.foresight_alpha == 1.0
        if open_loop and state.t in self._plan:
            return admissible(config, state, self._plan.pop(state.t))
        net = blend_foresight(self._net_true, self._net_base,
                              spec.foresight_alpha, state.t, window - 1)
        actions = self._solve(state, net)
        if open_loop:
            self._plan = {state.t + j: actions[j] for j in range(window)}
            return admissible(config, state, self._plan.pop(state.t))
        return admissible(config, state, actions[0])

    def _solve(self, state: SimState, net_forecast: np.ndarray) -> np.ndarray:
        program, bat = _assemble(self._config, state, net_forecast, self._spec,
                                 pad_steps=self._spec.horizon)
        key = (program.variable_count, program.row_count)
        basis, at_upper = self._warm.get(key, (None, frozenset()))
        solution = lp.solve_milp(program, basis=basis, at_upper=at_upper)
        if solution.status != "optimal":
            raise RuntimeError(
                f"planning solver ended with status {solution.status!r}")
        self._warm[key] = (solution.basis, solution.at_upper)
        return _window_actions(solution, bat, net_forecast.shape[0],
                               self._config.battery_count)


def make_policy(config: RecConfig, spec: PolicySpec):
    """Instantiate the policy described by spec."""
    if spec.kind == "rec_rule":
        return RulePolicy(config, "rec")
    if spec.kind == "self_rule":
        return RulePolicy(config, "self")
    if spec.kind == "mpc":
        return MpcPolicy(config, spec)
    raise ValueError(
        "rl_external policies act through the environment server and cannot "
        "run in-process"
    )
