"""Environment server: episodes over newline-delimited JSON.

One episode per connection.  A client resets with a config id, a seed
and a cost mode, then steps with battery actions until done.  Replies
carry the observation layout of the simulator module, with floats
serialized by json's shortest round-trip encoding.
"""

from __future__ import annotations

import json
import socketserver
import sys
from dataclasses import dataclass, field

import numpy as np

from .domain import PACKAGED_CONFIGS, RecConfig, load_config
from .exogenous import ExogenousSequence, sample_sequence, scenario_params
from .simulator import (
    CostMode,
    Exogenous,
    admissible,
    at_market_end,
    exogenous_at,
    initial_state,
    observation,
    step,
)


class Episode:
    """One simulated run bookkeeping states, rewards and the dense slot.

    The observation after the final step reports zero upcoming flows:
    the run is over and no further step will consume them.
    """

    def __init__(self, config: RecConfig, scenario: ExogenousSequence,
                 mode: CostMode = CostMode()):
        if scenario.member_count != config.member_count:
            raise ValueError(
                f"scenario covers {scenario.member_count} members, config "
                f"has {config.member_count}"
            )
        if scenario.step_count < config.grid.horizon:
            raise ValueError(
                f"scenario has {scenario.step_count} steps, the run needs "
                f"{config.grid.horizon}"
            )
        self._config = config
        self._scenario = scenario
        self._mode = mode
        self._state = initial_state(config)
        self._last_dense = 0.0

    @property
    def state(self):
        return self._state

    @property
    def t(self) -> int:
        return self._state.t

    @property
    def done(self) -> bool:
        return self._state.t >= self._config.grid.horizon

    def observation(self) -> np.ndarray:
        if self._state.t < self._config.grid.horizon:
            exo = exogenous_at(self._scenario, self._state.t)
        else:
            zeros = np.zeros(self._config.member_count)
            exo = Exogenous(consumption=zeros, production=zeros)
        return observation(self._config, self._state, exo, self._mode,
                           self._last_dense)

    def step(self, action) -> tuple[np.ndarray, float, bool, int]:
        """Apply the action (projected admissible) and advance one step."""
        if self.done:
            raise ValueError("episode is done; reset a new one")
        config = self._config
        exo = exogenous_at(self._scenario, self._state.t)
        action = admissible(config, self._state, action)
        # a fresh billing period starts with an empty dense-reward slot
        if self._state.market_in_billing == config.grid.markets_per_billing:
            self._last_dense = 0.0
        self._state, cost = step(config, self._state, exo, action, self._mode)
        reward = 0.0 if cost == 0.0 else -cost
        if self._mode.dense and at_market_end(config, self._state):
            self._last_dense = reward
        return self.observation(), reward, self.done, self._state.t


@dataclass
class ServerDefaults:
    """Connection defaults; reset messages may override mode and config."""

    config: str | None = None
    mode: CostMode = CostMode()
    _cache: dict = field(default_factory=dict, repr=False)

    def allowed(self, name: str) -> bool:
        return name in PACKAGED_CONFIGS or name == self.config

    def load(self, name: str) -> RecConfig:
        if name not in self._cache:
            self._cache[name] = load_config(name)
        return self._cache[name]


def _reset_episode(message: dict, defaults: ServerDefaults) -> Episode:
    name = message.get("config", defaults.config)
    if name is None:
        raise ValueError("reset needs a config (no server default set)")
    if not defaults.allowed(str(name)):
        raise ValueError(f"unknown config {name!r}")
    config = defaults.load(str(name))
    seed = message.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
    mode = defaults.mode
    if "mode" in message:
        raw = message["mode"]
        if not isinstance(raw, dict):
            raise ValueError("mode must be an object with dense/retail flags")
        mode = CostMode(dense=bool(raw.get("dense", defaults.mode.dense)),
                        retail=bool(raw.get("retail", defaults.mode.retail)))
    scenario = sample_sequence(config, scenario_params(config, seed))
    return Episode(config, scenario, mode)


def _obs_list(values: np.ndarray) -> list[float]:
    return [float(v) for v in values]


def handle_connection(lines, write, defaults: ServerDefaults):
    """Run the protocol over an iterable of request lines.

    write receives one serialized reply line per request; a close command
    ends the connection without a reply.
    """
    episode = None
    for line in lines:
        text = line.strip() if isinstance(line, str) else line.decode().strip()
        if not text:
            continue
        try:
            message = json.loads(text)
        except json.JSONDecodeError:
            write(json.dumps({"error": "invalid json"}) + "\n")
            continue
        if not isinstance(message, dict):
            write(json.dumps({"error": "message must be an object"}) + "\n")
            continue
        cmd = message.get("cmd")
        if cmd == "close":
            return
        try:
            if cmd == "reset":
                episode = _reset_episode(message, defaults)
                reply = {"obs": _obs_list(episode.observation()),
                         "t": episode.t}
            elif cmd == "step":
                if episode is None:
                    raise ValueError("reset required before step")
                if "action" not in message:
                    raise ValueError("step needs an action array")
                obs, reward, done, t = episode.step(message["action"])
                reply = {"obs": _obs_list(obs), "reward": float(reward),
                         "done": done, "t": t}
            else:
                raise ValueError(f"unknown cmd {cmd!r}")
        except (ValueError, TypeError) as error:
            write(json.dumps({"error": str(error)}) + "\n")
            continue
        write(json.dumps(reply) + "\n")


def serve_stdio(defaults: ServerDefaults):
    """Serve one connection over standard streams."""

    def write(reply: str):
        sys.stdout.write(reply)
        sys.stdout.flush()

    handle_connection(sys.stdin, write, defaults)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        def write(reply: str):
            self.wfile.write(reply.encode())
            self.wfile.flush()

        handle_connection(self.rfile, write, self.server.defaults)


class EnvServer(socketserver.ThreadingTCPServer):
    """One episode per connection; connections may run concurrently."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, defaults: ServerDefaults, port: int = 0,
                 host: str = "127.0.0.1"):
        super().__init__((host, port), _Handler)
        self.defaults = defaults

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_tcp(defaults: ServerDefaults, port: int = 0,
              announce=None) -> EnvServer:
    """Bind the TCP server; the caller drives serve_forever/shutdown."""
    server = EnvServer(defaults, port)
    if announce is not None:
        announce(json.dumps({"listening": server.port}) + "\n")
    return server
