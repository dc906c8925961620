"""Stochastic exogenous sequences and foresight-blended forecasts.

Scenario consumption and production profiles are sampled by adding
first-order autoregressive (red) noise to the base profiles of a
community configuration.  Every (member, flow) pair draws from its own
seeded random stream, so scenarios are reproducible and parallel
generation never shares state.  Forecast sequences blend the sampled
future with the base profile at a rate controlled by a foresight
parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import NoiseParams, RecConfig


@dataclass(frozen=True)
class ExogenousSequence:
    """Sampled consumption and production, kW, shape (steps, members)."""

    consumption: np.ndarray
    production: np.ndarray

    def __post_init__(self):
        cons = np.asarray(self.consumption, dtype=float)
        prod = np.asarray(self.production, dtype=float)
        object.__setattr__(self, "consumption", cons)
        object.__setattr__(self, "production", prod)
        if cons.ndim != 2 or prod.shape != cons.shape:
            raise ValueError("consumption and production must share a (T, M) shape")
        if np.any(cons < 0.0) or np.any(prod < 0.0):
            raise ValueError("flows must be >= 0")
        if np.any(np.minimum(cons, prod) != 0.0):
            raise ValueError("per-step consumption and production must be netted")

    @property
    def step_count(self) -> int:
        return self.consumption.shape[0]

    @property
    def member_count(self) -> int:
        return self.consumption.shape[1]


def sample_red_noise(
    rng: np.random.Generator, length: int, correlation: float, sigma: float
) -> np.ndarray:
    """AR(1) noise x with stationary standard deviation sigma.

    x_0 = w_0 and x_{t+1} = r*x_t + sqrt(1-r^2)*w_{t+1} with w ~ N(0, sigma^2),
    so every x_t is N(0, sigma^2) and the lag-1 autocorrelation is r.
    """
    if not 0.0 < correlation <= 1.0:
        raise ValueError(f"correlation must be in (0, 1], got {correlation}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    white = rng.normal(0.0, sigma, size=length)
    x = np.empty(length)
    if length == 0:
        return x
    x[0] = white[0]
    damp = math.sqrt(1.0 - correlation * correlation)
    for t in range(1, length):
        x[t] = correlation * x[t - 1] + damp * white[t]
    return x


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for one of the disjoint per-flow random streams."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _noisy_flows(base: np.ndarray, params: NoiseParams, flow_offset: int) -> np.ndarray:
    """Clamped noisy copy of one flow's base profiles.

    Columns that are identically zero describe devices the member does not
    own and stay exactly zero.  Member m's stream index is 2*m+flow_offset.
    """
    steps, members = base.shape
    result = np.empty_like(base)
    for m in range(members):
        column = base[:, m]
        sigma = params.sigma
        if params.relative:
            sigma = params.sigma * float(np.abs(column).mean())
        if sigma == 0.0 or not column.any():
            result[:, m] = column
            continue
        rng = _stream_rng(params.seed, 2 * m + flow_offset)
        noise = sample_red_noise(rng, steps, params.correlation, sigma)
        result[:, m] = np.maximum(column + noise, 0.0)
    return result


def sample_sequence(config: RecConfig, params: NoiseParams | None = None) -> ExogenousSequence:
    """Sample one scenario of member flows over the full profile length.

    Red noise is added per member and flow, negative results are clamped to
    zero, and per-step complementarity (no member both consumes and produces
    in one step) is restored by subtracting the overlap from both flows.
    With sigma = 0 the base profiles are returned unchanged.
    """
    if params is None:
        params = config.noise
    consumption = _noisy_flows(config.base_consumption, params, flow_offset=0)
    production = _noisy_flows(config.base_production, params, flow_offset=1)
    overlap = np.minimum(consumption, production)
    return ExogenousSequence(
        consumption=consumption - overlap, production=production - overlap
    )


def scenario_params(config: RecConfig, seed: int) -> NoiseParams:
    """Noise parameters of `config` reseeded for one scenario."""
    return replace(config.noise, seed=seed)


def blend_foresight(
    true_future: np.ndarray,
    base: np.ndarray,
    alpha: float,
    t: int,
    horizon: int,
) -> np.ndarray:
    """Forecast for steps t..t+horizon blending sampled truth with the base.

    Offsets 0 and 1 return the exact sampled values; from offset 2 on the
    forecast is alpha^offset * true + (1 - alpha^offset) * base, decaying
    toward the base profile as the offset grows.  alpha = 1 reproduces the
    sampled future exactly.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    true_future = np.asarray(true_future, dtype=float)
    base = np.asarray(base, dtype=float)
    if true_future.shape != base.shape:
        raise ValueError("true_future and base must share a shape")
    if t < 0 or horizon < 0 or t + horizon >= true_future.shape[0]:
        raise ValueError(
            f"window [{t}, {t + horizon}] exceeds the {true_future.shape[0]} "
            f"available steps"
        )
    window = slice(t, t + horizon + 1)
    weight = alpha ** np.arange(horizon + 1, dtype=float)
    if true_future.ndim == 2:
        weight = weight[:, None]
    forecast = weight * true_future[window] + (1.0 - weight) * base[window]
    exact = min(2, horizon + 1)
    forecast[:exact] = true_future[t:t + exact]
    return forecast
