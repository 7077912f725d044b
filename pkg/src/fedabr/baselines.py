"""Classical ABR policies used as evaluation baselines.

CONSTANT always requests one target bitrate. The throughput rule picks the
highest level whose encoding bitrate stays under a safety-scaled harmonic
mean of recently measured throughput. The buffer-based rule scores each
level by a control-gain weighted utility margin over the current buffer
occupancy, normalized by the level's next-chunk size, and takes the best
score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abrenv import utility
from .manifest import QualityLadder, VideoManifest
from .simcore import LevelChooser, PlayerState

DEFAULT_SAFETY_FACTOR = 0.9
DEFAULT_STARTUP_UTILITY = 5.0


@dataclass(frozen=True)
class BolaParams:
    """Control gain (seconds of buffer per util, in chunk units) and utility offset."""

    control_gain: float
    startup_utility: float = DEFAULT_STARTUP_UTILITY

    def __post_init__(self) -> None:
        if self.control_gain <= 0:
            raise ValueError("control_gain must be > 0")


def default_bola_params(
    manifest: VideoManifest,
    max_buffer_s: float,
    startup_utility: float = DEFAULT_STARTUP_UTILITY,
) -> BolaParams:
    """Gain tuned so the top level's score crosses zero one chunk below the buffer cap."""
    buffer_chunks = max_buffer_s / manifest.chunk_duration_s
    q_max = utility(manifest.ladder.max_kbps, manifest.ladder)
    gain = (buffer_chunks - 1.0) / (q_max + startup_utility)
    return BolaParams(control_gain=gain, startup_utility=startup_utility)


def constant_policy(ladder: QualityLadder, target_bitrate_kbps: int = 5000) -> LevelChooser:
    """Chooser that always returns the level at (or nearest below) the target bitrate."""
    level = 0
    for i, b in enumerate(ladder.bitrates_kbps):
        if b <= target_bitrate_kbps:
            level = i
    def choose(state: PlayerState, manifest: VideoManifest) -> int:
        return level
    return choose


def throughput_policy(
    history: np.ndarray,
    ladder: QualityLadder,
    safety_factor: float = DEFAULT_SAFETY_FACTOR,
) -> int:
    """Highest level whose bitrate is strictly under safety * harmonic-mean throughput.

    The estimate uses the nonzero entries of the measured-throughput history
    (zeros are unfilled slots); an empty history falls back to the lowest
    level.
    """
    samples = np.asarray(history, dtype=np.float64)
    nonzero = samples[samples > 0]
    if nonzero.size == 0:
        return 0
    estimate = nonzero.size / np.sum(1.0 / nonzero)
    budget_mbps = safety_factor * estimate
    level = 0
    for i, b in enumerate(ladder.bitrates_kbps):
        if b / 1000.0 < budget_mbps:
            level = i
    return level


def make_throughput_chooser(safety_factor: float = DEFAULT_SAFETY_FACTOR) -> LevelChooser:
    def choose(state: PlayerState, manifest: VideoManifest) -> int:
        return throughput_policy(state.throughput_history, manifest.ladder, safety_factor)
    return choose


def bola_scores(
    params: BolaParams,
    buffer_s: float,
    manifest: VideoManifest,
    chunk_index: int,
) -> np.ndarray:
    buffer_chunks = buffer_s / manifest.chunk_duration_s
    sizes = manifest.chunk_sizes_mb[chunk_index]
    qs = np.array([utility(b, manifest.ladder) for b in manifest.ladder.bitrates_kbps])
    return (params.control_gain * (qs + params.startup_utility) - buffer_chunks) / sizes


def bola_policy(
    params: BolaParams,
    buffer_s: float,
    manifest: VideoManifest,
    chunk_index: int,
) -> int:
    """Level with the best buffer-adjusted utility-per-megabit score.

    Ties break toward the higher level. The raw argmax is used even when
    every score is negative (an over-full buffer): in that regime larger
    chunks dilute the deficit least, which keeps the chosen level monotone
    in the buffer.
    """
    if buffer_s < 0:
        raise ValueError("buffer_s must be >= 0")
    scores = bola_scores(params, buffer_s, manifest, chunk_index)
    best = 0
    for m in range(1, len(scores)):
        if scores[m] >= scores[best]:
            best = m
    return best


def make_bola_chooser(params: BolaParams) -> LevelChooser:
    def choose(state: PlayerState, manifest: VideoManifest) -> int:
        return bola_policy(params, state.buffer_s, manifest, state.chunk_index)
    return choose
