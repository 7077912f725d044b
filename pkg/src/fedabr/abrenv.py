"""RL environment over the player: observation vector and QoE reward.

The per-chunk reward combines log-bitrate utility, a switch penalty on the
utility difference between consecutive chunks, and a rebuffer penalty:

    r = q(R) - alpha * |q(R_prev) - q(R)| - beta * rebuffer_seconds

with q(R) = ln(R / R_min). The first chunk carries no switch penalty.
Observations stack the six most recent measured throughputs and download
times, the next chunk's size at every level, the buffer level, the number
of chunks remaining, and the bitrate of the last downloaded chunk, each
divided by a fixed scale constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .manifest import QualityLadder, VideoManifest
from .simcore import (
    HISTORY_LEN,
    ClientEnvConfig,
    PlayerState,
    StepOutcome,
    download_chunk,
    reset,
)
from .traces import BandwidthTrace


@dataclass(frozen=True)
class RewardParams:
    alpha: float = 2.6
    beta: float = 1.0


@dataclass(frozen=True)
class FeatureScaling:
    """Fixed divisors applied to raw observation components."""

    throughput_mbps: float = 10.0
    download_time_s: float = 10.0
    chunk_size_mb: float = 10.0
    buffer_s: float = 20.0
    chunks_remaining: float = 60.0
    last_bitrate_mbps: float = 8.0


def utility(bitrate_kbps: int, ladder: QualityLadder) -> float:
    """Log utility q(R) = ln(R / R_min); zero at the lowest ladder level."""
    if bitrate_kbps not in ladder.bitrates_kbps:
        raise ValueError(f"bitrate {bitrate_kbps} not on ladder {ladder.bitrates_kbps}")
    return math.log(bitrate_kbps / ladder.min_kbps)


def reward(
    prev_level: int,
    level: int,
    rebuffer_s: float,
    params: RewardParams,
    ladder: QualityLadder,
) -> float:
    if rebuffer_s < 0:
        raise ValueError("rebuffer_s must be >= 0")
    q_prev = utility(ladder.bitrates_kbps[prev_level], ladder)
    q_cur = utility(ladder.bitrates_kbps[level], ladder)
    return q_cur - params.alpha * abs(q_prev - q_cur) - params.beta * rebuffer_s


def observation_dim(num_levels: int) -> int:
    return 2 * HISTORY_LEN + num_levels + 3


def observe(state: PlayerState, manifest: VideoManifest, scaling: FeatureScaling) -> np.ndarray:
    """Flattened, scaled observation for the current player state."""
    levels = manifest.num_levels
    obs = np.empty(observation_dim(levels))
    obs[0:HISTORY_LEN] = state.throughput_history / scaling.throughput_mbps
    obs[HISTORY_LEN : 2 * HISTORY_LEN] = state.download_time_history / scaling.download_time_s
    base = 2 * HISTORY_LEN
    if state.chunk_index < manifest.num_chunks:
        obs[base : base + levels] = manifest.chunk_sizes_mb[state.chunk_index] / scaling.chunk_size_mb
    else:
        obs[base : base + levels] = 0.0
    obs[base + levels] = state.buffer_s / scaling.buffer_s
    obs[base + levels + 1] = (manifest.num_chunks - state.chunk_index) / scaling.chunks_remaining
    if state.last_level is None:
        obs[base + levels + 2] = 0.0
    else:
        last_mbps = manifest.ladder.bitrates_kbps[state.last_level] / 1000.0
        obs[base + levels + 2] = last_mbps / scaling.last_bitrate_mbps
    return obs


TraceSource = BandwidthTrace | Callable[[], BandwidthTrace]


class AbrEnv:
    """Step/reset interface over the player for one client.

    `trace_source` is either a fixed trace or a callable returning the trace
    for the next episode (clients sample a new training trace per episode).
    Start offsets are drawn uniformly over the trace duration from `rng`
    when no fixed offset is given.
    """

    # Episodes end at the last chunk of the video, a true terminal state.
    episode_truncated = False

    def __init__(
        self,
        manifest: VideoManifest,
        trace_source: TraceSource,
        env_cfg: ClientEnvConfig,
        reward_params: RewardParams = RewardParams(),
        scaling: FeatureScaling = FeatureScaling(),
        rng: np.random.Generator | None = None,
        start_offset_s: float | None = 0.0,
    ) -> None:
        if start_offset_s is None and rng is None:
            raise ValueError("random start offsets need an rng")
        self.manifest = manifest
        self.trace_source = trace_source
        self.env_cfg = env_cfg
        self.reward_params = reward_params
        self.scaling = scaling
        self.rng = rng
        self.start_offset_s = start_offset_s
        self._state: PlayerState | None = None

    @property
    def num_actions(self) -> int:
        return self.manifest.num_levels

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.manifest.num_levels)

    @property
    def state(self) -> PlayerState:
        if self._state is None:
            raise SimulationErrorNotReset()
        return self._state

    def _next_trace(self) -> BandwidthTrace:
        if callable(self.trace_source):
            return self.trace_source()
        return self.trace_source

    def reset(self) -> np.ndarray:
        trace = self._next_trace()
        if self.start_offset_s is None:
            offset = float(self.rng.uniform(0.0, trace.duration_s))
        else:
            offset = self.start_offset_s
        self._state = reset(self.manifest, trace, self.env_cfg, offset)
        return observe(self._state, self.manifest, self.scaling)

    def step(self, action: int) -> tuple[np.ndarray, float, bool, StepOutcome]:
        state = self.state
        if not (0 <= action < self.num_actions):
            raise ValueError(f"action {action} out of range [0, {self.num_actions})")
        prev_level = state.last_level if state.last_level is not None else action
        outcome = download_chunk(state, action)
        r = reward(prev_level, action, outcome.rebuffer_s, self.reward_params, self.manifest.ladder)
        obs = observe(state, self.manifest, self.scaling)
        return obs, r, outcome.done, outcome


class SimulationErrorNotReset(RuntimeError):
    def __init__(self) -> None:
        super().__init__("environment used before reset()")
