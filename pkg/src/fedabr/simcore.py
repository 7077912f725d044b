"""Event-driven DASH player core.

Virtual time advances only through chunk downloads and buffer-full waits,
so a full episode simulates in well under a second of wall time. Per chunk:

  download time  d = rtt + transfer, where the transfer time solves the
                 bandwidth integral of the (piecewise-constant) trace,
                 starting rtt seconds after the request;
  rebuffer       max(0, d - buffer), playback drains during the download;
  buffer update  max(0, buffer - d) + chunk_duration, capped at the player
                 maximum; the overshoot is served as a wait before the next
                 request.

The transfer integral is solved segment by segment in closed form, so there
is no quadrature error, and the trace wraps around when an episode outlasts
it. The player keeps a short history of measured throughput and download
times (throughput measured over the transfer alone, rtt excluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .manifest import VideoManifest
from .traces import BandwidthTrace, TraceGroup

HISTORY_LEN = 6
DEFAULT_MAX_BUFFER_S = 20.0


class SimulationError(RuntimeError):
    """Stepping a finished episode or otherwise misusing the player."""


@dataclass(frozen=True)
class ClientEnvConfig:
    """Per-client environment: trace group, request round-trip time, buffer cap."""

    trace_group: TraceGroup = TraceGroup.FCC_HIGH
    rtt_s: float = 0.0
    max_buffer_s: float = DEFAULT_MAX_BUFFER_S

    def __post_init__(self) -> None:
        if self.rtt_s < 0:
            raise ValueError("rtt_s must be >= 0")
        if self.max_buffer_s <= 0:
            raise ValueError("max_buffer_s must be > 0")


@dataclass(frozen=True)
class StepOutcome:
    download_time_s: float
    rebuffer_s: float
    wait_s: float
    measured_throughput_mbps: float
    new_buffer_s: float
    done: bool


@dataclass
class PlayerState:
    """Mutable per-episode player state; one instance per running episode."""

    manifest: VideoManifest
    trace: BandwidthTrace
    env: ClientEnvConfig
    start_offset_s: float = 0.0
    chunk_index: int = 0
    buffer_s: float = 0.0
    elapsed_s: float = 0.0
    last_level: int | None = None
    last_download_time_s: float = 0.0
    throughput_history: np.ndarray = field(default_factory=lambda: np.zeros(HISTORY_LEN))
    download_time_history: np.ndarray = field(default_factory=lambda: np.zeros(HISTORY_LEN))

    @property
    def virtual_time_s(self) -> float:
        return self.start_offset_s + self.elapsed_s

    @property
    def done(self) -> bool:
        return self.chunk_index >= self.manifest.num_chunks


def reset(
    manifest: VideoManifest,
    trace: BandwidthTrace,
    env: ClientEnvConfig,
    start_offset_s: float = 0.0,
) -> PlayerState:
    """Fresh episode: empty buffer, zeroed history, trace read from the offset."""
    if start_offset_s < 0:
        raise ValueError("start_offset_s must be >= 0")
    return PlayerState(manifest=manifest, trace=trace, env=env, start_offset_s=start_offset_s)


def transfer_time_s(trace: BandwidthTrace, start_t_s: float, size_mb: float) -> float:
    """Time to deliver size_mb starting at trace time start_t_s.

    Walks the piecewise-constant segments (wrapping around the trace end),
    charging each segment's exact capacity; whole trace cycles are skipped
    in one step for very large transfers.
    """
    if size_mb <= 0:
        return 0.0
    ts = trace.t_s
    rates = trace.mbps
    seg = trace.segment_durations_s
    duration = trace.duration_s

    pos = math.fmod(start_t_s, duration)
    i = int(np.searchsorted(ts, pos, side="right")) - 1

    elapsed = 0.0
    remaining = size_mb
    while True:
        seg_end = ts[i] + seg[i]
        avail = seg_end - pos
        cap = rates[i] * avail
        if remaining <= cap:
            return float(elapsed + remaining / rates[i])
        elapsed += avail
        remaining -= cap
        i += 1
        if i == len(ts):
            i = 0
            cycles = int(remaining // trace.cycle_capacity_mb)
            if cycles > 0:
                skip = cycles * trace.cycle_capacity_mb
                if skip >= remaining:  # exact multiple: finish within the last cycle
                    cycles -= 1
                    skip = cycles * trace.cycle_capacity_mb
                elapsed += cycles * duration
                remaining -= skip
        pos = ts[i]


def download_chunk(state: PlayerState, level: int) -> StepOutcome:
    """Download the next chunk at `level`, advancing buffer and virtual time."""
    if state.done:
        raise SimulationError("episode already finished")
    manifest = state.manifest
    if not (0 <= level < manifest.num_levels):
        raise ValueError(f"level {level} out of range for {manifest.num_levels}-level ladder")

    env = state.env
    size_mb = float(manifest.chunk_sizes_mb[state.chunk_index, level])
    transfer = transfer_time_s(state.trace, state.virtual_time_s + env.rtt_s, size_mb)
    d = env.rtt_s + transfer
    rebuffer = max(0.0, d - state.buffer_s)
    buffer = max(0.0, state.buffer_s - d) + manifest.chunk_duration_s
    wait = 0.0
    if buffer > env.max_buffer_s:
        wait = buffer - env.max_buffer_s
        buffer = env.max_buffer_s
    throughput = size_mb / transfer

    # Single accumulation per step keeps episode time equal to the plain
    # left-fold sum of (d + wait) over the outcome log.
    state.elapsed_s = state.elapsed_s + (d + wait)
    state.buffer_s = buffer
    state.last_level = level
    state.last_download_time_s = d
    state.throughput_history[1:] = state.throughput_history[:-1]
    state.throughput_history[0] = throughput
    state.download_time_history[1:] = state.download_time_history[:-1]
    state.download_time_history[0] = d
    state.chunk_index += 1

    return StepOutcome(
        download_time_s=d,
        rebuffer_s=rebuffer,
        wait_s=wait,
        measured_throughput_mbps=throughput,
        new_buffer_s=buffer,
        done=state.done,
    )


LevelChooser = Callable[[PlayerState, VideoManifest], int]


def run_episode(
    manifest: VideoManifest,
    trace: BandwidthTrace,
    env: ClientEnvConfig,
    policy: LevelChooser,
    start_offset_s: float = 0.0,
) -> list[StepOutcome]:
    """Play every chunk under `policy`; returns one outcome per chunk."""
    state = reset(manifest, trace, env, start_offset_s)
    outcomes = []
    while not state.done:
        level = policy(state, manifest)
        outcomes.append(download_chunk(state, level))
    return outcomes


def write_episode_log(path, levels: list[int], outcomes: list[StepOutcome]) -> None:
    """Per-chunk CSV event log for one episode."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("chunk,level,download_s,rebuffer_s,wait_s,throughput_mbps,buffer_s\n")
        for n, (lvl, out) in enumerate(zip(levels, outcomes)):
            fh.write(
                f"{n},{lvl},{out.download_time_s!r},{out.rebuffer_s!r},"
                f"{out.wait_s!r},{out.measured_throughput_mbps!r},{out.new_buffer_s!r}\n"
            )
