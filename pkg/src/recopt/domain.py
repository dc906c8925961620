"""Core data model for renewable energy community (REC) simulations.

Everything downstream (billing, simulation, policies) works on the frozen
types defined here.  Member arrays are indexed 0..M-1 in code; data files
label members with 1-based ids (m1, m2, ...) to match common reporting
conventions, and the loader converts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Named configurations shipped with the package (resolved by load_config).
PACKAGED_CONFIGS = ("rec2", "rec7", "rec7-720", "rec7-desk")


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Tariffs:
    """Retail and community price data for one REC.

    Attributes
    ----------
    buy : np.ndarray
        Retail buying price per member, euro/kWh.
    sell : np.ndarray
        Retail selling (feed-in) price per member, euro/kWh.
    offtake_peak : float
        Price applied to each member's highest per-market-period offtake,
        euro/kWh.
    injection_peak : float
        Price applied to each member's highest per-market-period injection,
        euro/kWh.
    rec_buy_fee : float
        Fee per kWh obtained through the community reallocation.
    rec_sell_fee : float
        Fee per kWh shared through the community reallocation.
    """

    buy: np.ndarray
    sell: np.ndarray
    offtake_peak: float
    injection_peak: float
    rec_buy_fee: float
    rec_sell_fee: float

    def __post_init__(self):
        buy = _as_float_array(self.buy, "buy")
        sell = _as_float_array(self.sell, "sell")
        object.__setattr__(self, "buy", buy)
        object.__setattr__(self, "sell", sell)
        if buy.ndim != 1 or sell.ndim != 1:
            raise ValueError("buy and sell must be 1-d arrays")
        if buy.shape != sell.shape:
            raise ValueError(
                f"buy has {buy.shape[0]} members but sell has {sell.shape[0]}"
            )
        for label in ("offtake_peak", "injection_peak", "rec_buy_fee", "rec_sell_fee"):
            value = float(getattr(self, label))
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{label} must be finite and >= 0, got {value}")
            object.__setattr__(self, label, value)
        if np.any(buy < 0.0) or np.any(sell < 0.0):
            raise ValueError("prices must be >= 0")

    @property
    def member_count(self) -> int:
        return self.buy.shape[0]

    def without_peak_prices(self) -> "Tariffs":
        """Copy of the tariffs with both peak prices set to zero."""
        return Tariffs(
            buy=self.buy.copy(),
            sell=self.sell.copy(),
            offtake_peak=0.0,
            injection_peak=0.0,
            rec_buy_fee=self.rec_buy_fee,
            rec_sell_fee=self.rec_sell_fee,
        )


@dataclass(frozen=True)
class BatterySpec:
    """A stationary battery owned by one member.

    Power limits are positive magnitudes in kW; an action is a signed power
    (positive = charging).  Efficiencies are in (0, 1]: charging at power u
    for one step of length delta stores eff_charge * delta * u kWh, while
    meeting a discharge of magnitude u at the meter drains
    delta * u / eff_discharge kWh from storage.
    """

    owner: int
    capacity_kwh: float
    max_charge_kw: float
    max_discharge_kw: float
    eff_charge: float = 1.0
    eff_discharge: float = 1.0

    def __post_init__(self):
        if self.owner < 0:
            raise ValueError(f"owner index must be >= 0, got {self.owner}")
        if self.capacity_kwh <= 0.0:
            raise ValueError(f"capacity_kwh must be > 0, got {self.capacity_kwh}")
        if self.max_charge_kw < 0.0 or self.max_discharge_kw < 0.0:
            raise ValueError("power limits must be >= 0")
        for label in ("eff_charge", "eff_discharge"):
            eff = getattr(self, label)
            if not 0.0 < eff <= 1.0:
                raise ValueError(f"{label} must be in (0, 1], got {eff}")


@dataclass(frozen=True)
class TimeGrid:
    """Discretization of the horizon into steps, market and billing periods.

    A market period lasts steps_per_market steps; a billing period lasts
    markets_per_billing market periods.  δ (step_hours) converts power (kW)
    into per-step energy (kWh).
    """

    step_hours: float
    steps_per_market: int
    markets_per_billing: int
    horizon: int
    discount: float = 1.0

    def __post_init__(self):
        if self.step_hours <= 0.0:
            raise ValueError(f"step_hours must be > 0, got {self.step_hours}")
        for label in ("steps_per_market", "markets_per_billing", "horizon"):
            value = getattr(self, label)
            if int(value) != value or value < 1:
                raise ValueError(f"{label} must be a positive integer, got {value}")
            object.__setattr__(self, label, int(value))
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")

    @property
    def steps_per_billing(self) -> int:
        return self.steps_per_market * self.markets_per_billing


@dataclass(frozen=True)
class NoiseParams:
    """First-order autoregressive (red) noise applied to base profiles.

    correlation is the lag-1 coefficient in (0, 1]; sigma is the stationary
    standard deviation (kW).  With relative=True, sigma is interpreted as a
    fraction of the mean magnitude of the profile it perturbs.  seed feeds
    the per-flow random streams; scenario generators replace it per sample.
    """

    correlation: float = 0.5
    sigma: float = 0.0
    relative: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.correlation <= 1.0:
            raise ValueError(
                f"correlation must be in (0, 1], got {self.correlation}"
            )
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class MeterMatrix:
    """Per-member, per-market-period energy meters for one billing period.

    consumption[m, r] and production[m, r] hold the netted offtake and
    injection (kWh) of member m during market period r.  Entries for market
    periods beyond periods_elapsed are zero; steps_in_billing counts simulator
    steps accumulated so far (R * steps-per-market once the matrix is full).
    """

    consumption: np.ndarray
    production: np.ndarray
    periods_elapsed: int
    steps_in_billing: int

    def __post_init__(self):
        cons = _as_float_array(self.consumption, "consumption")
        prod = _as_float_array(self.production, "production")
        object.__setattr__(self, "consumption", cons)
        object.__setattr__(self, "production", prod)
        if cons.ndim != 2 or prod.shape != cons.shape:
            raise ValueError("consumption and production must share an (M, R) shape")
        if np.any(cons < 0.0) or np.any(prod < 0.0):
            raise ValueError("meter readings must be >= 0")
        if not 0 <= self.periods_elapsed <= cons.shape[1]:
            raise ValueError(
                f"periods_elapsed must lie in [0, {cons.shape[1]}], "
                f"got {self.periods_elapsed}"
            )
        if self.steps_in_billing < 0:
            raise ValueError("steps_in_billing must be >= 0")
        if self.periods_elapsed < cons.shape[1]:
            beyond = slice(self.periods_elapsed, None)
            if np.any(cons[:, beyond] != 0.0) or np.any(prod[:, beyond] != 0.0):
                raise ValueError("meters beyond periods_elapsed must be zero")

    @property
    def member_count(self) -> int:
        return self.consumption.shape[0]

    @property
    def period_count(self) -> int:
        return self.consumption.shape[1]

    @staticmethod
    def full(consumption, production) -> "MeterMatrix":
        """Meter matrix for a completed billing period."""
        cons = np.asarray(consumption, dtype=float)
        return MeterMatrix(
            consumption=cons,
            production=np.asarray(production, dtype=float),
            periods_elapsed=cons.shape[1],
            steps_in_billing=0,
        )


@dataclass(frozen=True)
class RecConfig:
    """One fully specified community: members, tariffs, assets, profiles."""

    name: str
    tariffs: Tariffs
    grid: TimeGrid
    batteries: tuple[BatterySpec, ...]
    base_consumption: np.ndarray  # (steps, members), kW
    base_production: np.ndarray   # (steps, members), kW
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self):
        cons = _as_float_array(self.base_consumption, "base_consumption")
        prod = _as_float_array(self.base_production, "base_production")
        object.__setattr__(self, "base_consumption", cons)
        object.__setattr__(self, "base_production", prod)
        object.__setattr__(self, "batteries", tuple(self.batteries))
        if cons.ndim != 2 or prod.shape != cons.shape:
            raise ValueError("base profiles must share a (steps, members) shape")
        if cons.shape[1] != self.tariffs.member_count:
            raise ValueError(
                f"profiles cover {cons.shape[1]} members, tariffs define "
                f"{self.tariffs.member_count}"
            )
        if cons.shape[0] < self.grid.horizon:
            raise ValueError(
                f"profiles must cover at least horizon={self.grid.horizon} steps, "
                f"got {cons.shape[0]}"
            )
        if np.any(cons < 0.0) or np.any(prod < 0.0):
            raise ValueError("base profiles must be >= 0")
        if np.any((cons > 0.0) & (prod > 0.0)):
            raise ValueError(
                "base profiles must be netted per step "
                "(consumption * production == 0 for every member and step)"
            )
        for battery in self.batteries:
            if battery.owner >= self.tariffs.member_count:
                raise ValueError(
                    f"battery owner {battery.owner} out of range for "
                    f"{self.tariffs.member_count} members"
                )

    @property
    def member_count(self) -> int:
        return self.tariffs.member_count

    @property
    def battery_count(self) -> int:
        return len(self.batteries)


def _profiles_from_csv(path: Path, member_count: int):
    """Read per-member flow columns from a wide CSV.

    The header names each column "<member_id>:<flow>" with 1-based member ids
    and flow in {consumption, production}; one row per time step, kW values.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader if row]
    columns = {}
    for position, label in enumerate(header):
        member_text, _, flow = label.partition(":")
        if flow not in ("consumption", "production"):
            raise ValueError(f"unrecognized profile column {label!r} in {path}")
        member = int(member_text.lstrip("m")) - 1
        columns[(member, flow)] = position
    steps = len(rows)
    data = np.asarray(rows, dtype=float)
    cons = np.zeros((steps, member_count))
    prod = np.zeros((steps, member_count))
    for member in range(member_count):
        if (member, "consumption") in columns:
            cons[:, member] = data[:, columns[(member, "consumption")]]
        if (member, "production") in columns:
            prod[:, member] = data[:, columns[(member, "production")]]
    return cons, prod


def config_from_dict(raw: dict, base_dir: Path) -> RecConfig:
    """Build a RecConfig from parsed JSON, resolving profile paths."""
    tariffs_raw = raw["tariffs"]
    tariffs = Tariffs(
        buy=tariffs_raw["buy"],
        sell=tariffs_raw["sell"],
        offtake_peak=tariffs_raw["offtake_peak"],
        injection_peak=tariffs_raw["injection_peak"],
        rec_buy_fee=tariffs_raw["rec_buy_fee"],
        rec_sell_fee=tariffs_raw["rec_sell_fee"],
    )
    grid_raw = raw["time_grid"]
    grid = TimeGrid(
        step_hours=grid_raw["step_hours"],
        steps_per_market=grid_raw["steps_per_market"],
        markets_per_billing=grid_raw["markets_per_billing"],
        horizon=grid_raw["horizon"],
        discount=grid_raw.get("discount", 1.0),
    )
    batteries = tuple(
        BatterySpec(
            owner=int(spec["owner"]) - 1,
            capacity_kwh=spec["capacity_kwh"],
            max_charge_kw=spec["max_charge_kw"],
            max_discharge_kw=spec["max_discharge_kw"],
            eff_charge=spec.get("eff_charge", 1.0),
            eff_discharge=spec.get("eff_discharge", 1.0),
        )
        for spec in raw.get("batteries", [])
    )
    noise_raw = raw.get("noise", {})
    noise = NoiseParams(
        correlation=noise_raw.get("correlation", 0.5),
        sigma=noise_raw.get("sigma", 0.0),
        relative=noise_raw.get("relative", False),
        seed=noise_raw.get("seed", 0),
    )
    cons, prod = _profiles_from_csv(
        base_dir / raw["profiles_csv"], tariffs.member_count
    )
    return RecConfig(
        name=raw["name"],
        tariffs=tariffs,
        grid=grid,
        batteries=batteries,
        base_consumption=cons,
        base_production=prod,
        noise=noise,
    )


def load_config(name_or_path: str) -> RecConfig:
    """Load a packaged named config or a JSON config file from disk."""
    if name_or_path in PACKAGED_CONFIGS:
        base_dir = Path(__file__).parent / "configs"
        path = base_dir / f"{name_or_path.replace('-', '_')}.json"
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValueError(
                f"unknown config {name_or_path!r}: not a packaged name "
                f"{PACKAGED_CONFIGS} and no such file"
            )
    with open(path) as handle:
        raw = json.load(handle)
    return config_from_dict(raw, path.parent)
