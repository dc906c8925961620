"""Electricity billing for renewable energy communities.

Implements the no-community reference bill, the intermediate bill for a
given allocation, the community reallocation scheme as a linear program
(with offtake and injection peaks either included in or excluded from the
objective), a greedy per-market-period allocator for the no-peak case, and
the closed form for two-member communities.

Conventions: meter matrices hold nonnegative kWh per member and market
period.  alloc_to_member[m, r] is energy member m obtains through the
community instead of from its retailer, alloc_from_member[m, r] is energy
it shares through the community instead of selling to its retailer.  Bills
are in euro; negative entries are net revenue.  tau is the elapsed fraction
of the billing period: the first ceil(tau * R) market periods are billed
and the peak terms are scaled by tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lp
from .domain import MeterMatrix, Tariffs


@dataclass(frozen=True)
class ReallocationResult:
    """Outcome of one billing-period reallocation.

    Attributes
    ----------
    alloc_to_member, alloc_from_member : np.ndarray
        Community exchanges per member and market period, kWh, shape (M, R).
    member_bills : np.ndarray
        Per-member bill for the residual retail exchanges plus community
        fees and tau-scaled peak costs, euro.
    offtake_peak, injection_peak : np.ndarray
        Per-member peaks of the residual retail exchanges, kWh.
    tau : float
        Elapsed fraction of the billing period the bills cover.
    objective : float
        Value of the minimized objective.  Includes the peak terms only
        when they were part of the optimization.
    status : str
        Solver status, "optimal" unless something went wrong.
    """

    alloc_to_member: np.ndarray
    alloc_from_member: np.ndarray
    member_bills: np.ndarray
    offtake_peak: np.ndarray
    injection_peak: np.ndarray
    tau: float
    objective: float
    status: str

    def __post_init__(self):
        if self.alloc_to_member.shape != self.alloc_from_member.shape:
            raise ValueError("allocation matrices must share an (M, R) shape")
        members = self.alloc_to_member.shape[0]
        for label in ("member_bills", "offtake_peak", "injection_peak"):
            if getattr(self, label).shape != (members,):
                raise ValueError(f"{label} must have one entry per member")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    @property
    def global_bill(self) -> float:
        """Sum of the member bills, euro."""
        return float(self.member_bills.sum())


def _check_members(meters: MeterMatrix, tariffs: Tariffs) -> None:
    if meters.member_count != tariffs.member_count:
        raise ValueError(
            f"meters cover {meters.member_count} members "
            f"but tariffs cover {tariffs.member_count}"
        )


def _periods_counted(tau: float, periods: int) -> int:
    return int(math.ceil(tau * periods - 1e-9))


def _default_tau(meters: MeterMatrix) -> float:
    if meters.period_count == 0:
        return 0.0
    return meters.periods_elapsed / meters.period_count


def _resolve_tau(meters: MeterMatrix, tau: float | None) -> float:
    """tau for a reallocation, checked against the elapsed meter periods."""
    if tau is None:
        return _default_tau(meters)
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    counted = _periods_counted(tau, meters.period_count)
    if counted != meters.periods_elapsed:
        raise ValueError(
            f"tau={tau} covers {counted} market periods but the meters "
            f"have {meters.periods_elapsed} elapsed"
        )
    return tau


def exchange_bounds(meters: MeterMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Net offtake and net injection per member and market period, kWh.

    These cap how much each member can buy from, respectively sell to, the
    community in each market period.
    """
    net = meters.consumption - meters.production
    return np.maximum(net, 0.0), np.maximum(-net, 0.0)


def bill_no_rec(meters: MeterMatrix, tariffs: Tariffs) -> np.ndarray:
    """Per-member bill without any community exchange, euro.

    Energy is billed at each member's retail prices and the per-billing
    period offtake and injection peaks at the community peak prices.
    """
    _check_members(meters, tariffs)
    cons = meters.consumption
    prod = meters.production
    energy = tariffs.buy * cons.sum(axis=1) - tariffs.sell * prod.sum(axis=1)
    if meters.period_count == 0:
        return energy
    peaks = tariffs.offtake_peak * cons.max(axis=1)
    peaks = peaks + tariffs.injection_peak * prod.max(axis=1)
    return energy + peaks


def _bill_components(meters, tariffs, bought, sold, tau, counted):
    """Bills and peaks over the first `counted` market periods."""
    window = slice(0, counted)
    residual_cons = meters.consumption[:, window] - bought[:, window]
    residual_prod = meters.production[:, window] - sold[:, window]
    energy = tariffs.buy * residual_cons.sum(axis=1)
    energy = energy - tariffs.sell * residual_prod.sum(axis=1)
    fees = tariffs.rec_buy_fee * bought[:, window].sum(axis=1)
    fees = fees + tariffs.rec_sell_fee * sold[:, window].sum(axis=1)
    if counted:
        offtake = np.maximum(residual_cons.max(axis=1), 0.0)
        injection = np.maximum(residual_prod.max(axis=1), 0.0)
    else:
        offtake = np.zeros(meters.member_count)
        injection = np.zeros(meters.member_count)
    peaks = tariffs.offtake_peak * offtake + tariffs.injection_peak * injection
    return energy + fees + tau * peaks, offtake, injection


def intermediate_bill(
    meters: MeterMatrix,
    tariffs: Tariffs,
    alloc_to_member: np.ndarray,
    alloc_from_member: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Per-member bill for a given allocation after a fraction tau of the
    billing period, euro.

    Only the first ceil(tau * R) market periods are billed and the peak
    terms are scaled by tau.  At tau=1 with a zero allocation this reduces
    to bill_no_rec.  Allocations referencing later periods are rejected.
    """
    _check_members(meters, tariffs)
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    bought = np.asarray(alloc_to_member, dtype=float)
    sold = np.asarray(alloc_from_member, dtype=float)
    shape = (meters.member_count, meters.period_count)
    if bought.shape != shape or sold.shape != shape:
        raise ValueError(f"allocations must have shape {shape}")
    if np.any(bought < 0.0) or np.any(sold < 0.0):
        raise ValueError("allocations must be >= 0")
    counted = _periods_counted(tau, meters.period_count)
    if counted < meters.period_count:
        beyond = slice(counted, None)
        if np.any(bought[:, beyond] != 0.0) or np.any(sold[:, beyond] != 0.0):
            raise ValueError(
                f"allocation references market periods beyond the {counted} "
                f"covered by tau={tau}"
            )
    bills, _, _ = _bill_components(meters, tariffs, bought, sold, tau, counted)
    return bills


def _energy_objective(meters, tariffs, bought, sold):
    """Energy and fee part of the total rebilled cost, peak terms excluded."""
    base = tariffs.buy @ meters.consumption.sum(axis=1)
    base = base - tariffs.sell @ meters.production.sum(axis=1)
    delta = (tariffs.rec_buy_fee - tariffs.buy) @ bought.sum(axis=1)
    delta = delta + (tariffs.rec_sell_fee + tariffs.sell) @ sold.sum(axis=1)
    return float(base + delta)


def _result(meters, tariffs, bought, sold, tau, objective):
    bills, offtake, injection = _bill_components(
        meters, tariffs, bought, sold, tau, meters.periods_elapsed
    )
    return ReallocationResult(
        bought, sold, bills, offtake, injection, tau, objective, "optimal"
    )


def _empty_result(meters, tau):
    members = meters.member_count
    periods = meters.period_count
    zeros = np.zeros(members)
    return ReallocationResult(
        np.zeros((members, periods)),
        np.zeros((members, periods)),
        zeros,
        zeros.copy(),
        zeros.copy(),
        tau,
        0.0,
        "optimal",
    )


def optimal_reallocation(
    meters: MeterMatrix,
    tariffs: Tariffs,
    *,
    tau: float | None = None,
    include_peaks: bool = True,
) -> ReallocationResult:
    """Minimize the total community bill by reallocating metered energy.

    Solves a linear program over per-member, per-market-period community
    purchases and sales, bounded by each member's net offtake and net
    injection and balanced within every market period.  With include_peaks
    the objective carries each member's residual offtake and injection
    peaks weighted by tau times the peak prices; without it the peaks are
    ignored during optimization but still appear in the reported bills.

    tau defaults to the elapsed fraction of the billing period.
    """
    _check_members(meters, tariffs)
    members = meters.member_count
    elapsed = meters.periods_elapsed
    tau = _resolve_tau(meters, tau)
    if elapsed == 0:
        return _empty_result(meters, tau)

    net_offtake, net_injection = exchange_bounds(meters)
    cons = meters.consumption
    prod = meters.production

    builder = lp.ProgramBuilder("reallocation")
    builder.objective_constant = float(
        tariffs.buy @ cons.sum(axis=1) - tariffs.sell @ prod.sum(axis=1)
    )
    buy_vars: dict[tuple[int, int], int] = {}
    sell_vars: dict[tuple[int, int], int] = {}
    for r in range(elapsed):
        for m in range(members):
            if net_offtake[m, r] > 0.0:
                buy_vars[m, r] = builder.add_variable(
                    f"buy_m{m}_r{r}",
                    0.0,
                    net_offtake[m, r],
                    cost=tariffs.rec_buy_fee - tariffs.buy[m],
                )
            if net_injection[m, r] > 0.0:
                sell_vars[m, r] = builder.add_variable(
                    f"sell_m{m}_r{r}",
                    0.0,
                    net_injection[m, r],
                    cost=tariffs.rec_sell_fee + tariffs.sell[m],
                )
    for r in range(elapsed):
        terms = [(buy_vars[m, r], 1.0) for m in range(members) if (m, r) in buy_vars]
        terms += [(sell_vars[m, r], -1.0) for m in range(members) if (m, r) in sell_vars]
        if terms:
            builder.add_constraint(terms, lp.EQUAL, 0.0, name=f"balance_r{r}")

    if include_peaks:
        if tariffs.offtake_peak > 0.0:
            for m in range(members):
                hot = [r for r in range(elapsed) if cons[m, r] > 0.0]
                if not hot:
                    continue
                peak = builder.add_variable(
                    f"offtake_peak_m{m}", 0.0, np.inf, cost=tau * tariffs.offtake_peak
                )
                for r in hot:
                    # peak >= consumption - bought
                    terms = [(peak, 1.0)]
                    if (m, r) in buy_vars:
                        terms.append((buy_vars[m, r], 1.0))
                    builder.add_constraint(
                        terms, lp.GREATER_EQUAL, cons[m, r], name=f"offpeak_m{m}_r{r}"
                    )
        if tariffs.injection_peak > 0.0:
            for m in range(members):
                hot = [r for r in range(elapsed) if prod[m, r] > 0.0]
                if not hot:
                    continue
                peak = builder.add_variable(
                    f"injection_peak_m{m}", 0.0, np.inf, cost=tau * tariffs.injection_peak
                )
                for r in hot:
                    # peak >= production - sold
                    terms = [(peak, 1.0)]
                    if (m, r) in sell_vars:
                        terms.append((sell_vars[m, r], 1.0))
                    builder.add_constraint(
                        terms, lp.GREATER_EQUAL, prod[m, r], name=f"injpeak_m{m}_r{r}"
                    )

    solution = lp.solve_lp(builder.build())
    if solution.status != "optimal":
        raise RuntimeError(f"reallocation LP ended with status {solution.status}")
    bought = np.zeros((members, meters.period_count))
    sold = np.zeros((members, meters.period_count))
    for (m, r), j in buy_vars.items():
        bought[m, r] = solution.x[j]
    for (m, r), j in sell_vars.items():
        sold[m, r] = solution.x[j]
    return _result(meters, tariffs, bought, sold, tau, float(solution.objective))


def greedy_no_peak(
    meters: MeterMatrix, tariffs: Tariffs, *, tau: float | None = None
) -> ReallocationResult:
    """Peak-ignoring reallocation via per-market-period greedy matching.

    When net community consumption covers the net production, the whole net
    production is shared and buyers are served in decreasing order of their
    buying price; otherwise every net consumer is served and producers
    share in increasing order of their selling price.  This reproduces the
    peak-ignoring LP optimum whenever every exchange is profitable, i.e.
    min(buy) - rec_buy_fee - rec_sell_fee - max(sell) > 0 over the members.

    The reported bills still carry the peak prices of `tariffs`; the
    objective field holds the peak-free value that the greedy order
    minimizes.
    """
    _check_members(meters, tariffs)
    if np.any(tariffs.buy <= 0.0) or np.any(tariffs.sell <= 0.0):
        raise ValueError("greedy matching requires strictly positive prices")
    tau = _resolve_tau(meters, tau)
    net_offtake, net_injection = exchange_bounds(meters)
    bought = np.zeros_like(net_offtake)
    sold = np.zeros_like(net_injection)
    buyers = np.argsort(-tariffs.buy, kind="stable")
    sellers = np.argsort(tariffs.sell, kind="stable")
    for r in range(meters.periods_elapsed):
        offtake = net_offtake[:, r]
        injection = net_injection[:, r]
        total_cons = offtake.sum()
        total_prod = injection.sum()
        if total_prod <= total_cons:
            sold[:, r] = injection
            remaining = total_prod
            for m in buyers:
                if remaining <= 0.0:
                    break
                taken = min(offtake[m], remaining)
                bought[m, r] = taken
                remaining -= taken
        else:
            bought[:, r] = offtake
            remaining = total_cons
            for m in sellers:
                if remaining <= 0.0:
                    break
                shared = min(injection[m], remaining)
                sold[m, r] = shared
                remaining -= shared
    objective = _energy_objective(meters, tariffs, bought, sold)
    return _result(meters, tariffs, bought, sold, tau, objective)


def two_member_reallocation(
    meters: MeterMatrix, tariffs: Tariffs, *, tau: float | None = None
) -> ReallocationResult:
    """Closed-form peak-ignoring reallocation for a two-member community.

    In each market period the net producer, if any, shares as much energy
    as the other member's net consumption absorbs.  Coincides with
    greedy_no_peak for two members, and with the peak-ignoring LP optimum
    under the same profitability condition.
    """
    _check_members(meters, tariffs)
    if meters.member_count != 2:
        raise ValueError(f"expected exactly 2 members, got {meters.member_count}")
    tau = _resolve_tau(meters, tau)
    net_offtake, net_injection = exchange_bounds(meters)
    # Meters beyond periods_elapsed are zero, so these exchanges are too.
    first_to_second = np.minimum(net_injection[0], net_offtake[1])
    second_to_first = np.minimum(net_injection[1], net_offtake[0])
    sold = np.stack([first_to_second, second_to_first])
    bought = np.stack([second_to_first, first_to_second])
    objective = _energy_objective(meters, tariffs, bought, sold)
    return _result(meters, tariffs, bought, sold, tau, objective)
