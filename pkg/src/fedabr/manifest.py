"""Video model: quality ladder, per-chunk sizes, synthetic manifest generation.

A manifest fixes the action space (one action per ladder level) and the
per-chunk download sizes the simulator charges against the network trace.
Synthetic manifests draw one size factor per chunk, shared across levels,
so actual chunk sizes sit below the encoding bitrate while level ordering
is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BITRATES_KBPS = (700, 900, 2000, 3000, 5000, 6000, 8000)
DEFAULT_CHUNK_DURATION_S = 4.0
DEFAULT_NUM_CHUNKS = 60
DEFAULT_SIZE_FACTOR_RANGE = (0.3, 0.9)

_SIZE_DECIMALS = 6  # file format carries 6 decimal digits; sizes are rounded to match


class ManifestError(ValueError):
    """Invalid manifest parameters or malformed manifest file."""


@dataclass(frozen=True)
class QualityLadder:
    """Ordered set of encoding bitrates (Kbps), ascending."""

    bitrates_kbps: tuple[int, ...] = DEFAULT_BITRATES_KBPS

    def __post_init__(self) -> None:
        if len(self.bitrates_kbps) < 2:
            raise ManifestError("ladder needs at least 2 levels")
        if any(b <= 0 for b in self.bitrates_kbps):
            raise ManifestError("bitrates must be positive")
        if any(a >= b for a, b in zip(self.bitrates_kbps, self.bitrates_kbps[1:])):
            raise ManifestError("bitrates must be strictly ascending")

    def __len__(self) -> int:
        return len(self.bitrates_kbps)

    @property
    def min_kbps(self) -> int:
        return self.bitrates_kbps[0]

    @property
    def max_kbps(self) -> int:
        return self.bitrates_kbps[-1]


@dataclass(frozen=True)
class VideoManifest:
    """Chunked video: ladder, chunk duration, and a [chunks x levels] size matrix (Mb)."""

    ladder: QualityLadder
    chunk_duration_s: float
    chunk_sizes_mb: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        sizes = np.asarray(self.chunk_sizes_mb, dtype=np.float64)
        if sizes.ndim != 2 or sizes.shape[1] != len(self.ladder):
            raise ManifestError(
                f"size matrix shape {sizes.shape} does not match ladder of {len(self.ladder)} levels"
            )
        if sizes.shape[0] < 1:
            raise ManifestError("manifest needs at least one chunk")
        if not np.all(sizes > 0):
            raise ManifestError("every chunk size must be > 0")
        if not np.all(np.diff(sizes, axis=1) > 0):
            raise ManifestError("chunk sizes must be strictly increasing across levels")
        if self.chunk_duration_s <= 0:
            raise ManifestError("chunk duration must be > 0")
        sizes.flags.writeable = False
        object.__setattr__(self, "chunk_sizes_mb", sizes)

    @property
    def num_chunks(self) -> int:
        return self.chunk_sizes_mb.shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.ladder)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoManifest):
            return NotImplemented
        return (
            self.ladder == other.ladder
            and self.chunk_duration_s == other.chunk_duration_s
            and self.chunk_sizes_mb.shape == other.chunk_sizes_mb.shape
            and bool(np.all(self.chunk_sizes_mb == other.chunk_sizes_mb))
        )


def generate_manifest(
    ladder: QualityLadder = QualityLadder(),
    num_chunks: int = DEFAULT_NUM_CHUNKS,
    chunk_duration_s: float = DEFAULT_CHUNK_DURATION_S,
    size_factor_range: tuple[float, float] = DEFAULT_SIZE_FACTOR_RANGE,
    seed: int = 0,
) -> VideoManifest:
    """Synthesize a manifest with one uniform size factor per chunk.

    chunk_sizes_mb[n][l] = bitrate_l (Mbps) * chunk_duration_s * f_n with
    f_n ~ U[low, high]; the shared factor keeps levels strictly ordered.
    Deterministic for a fixed seed. Sizes are rounded to 6 decimals so that
    saving and reloading reproduces the matrix bit-exactly.
    """
    low, high = size_factor_range
    if not (0 < low <= high <= 1):
        raise ManifestError(f"size factor range must satisfy 0 < low <= high <= 1, got {size_factor_range}")
    if num_chunks < 1:
        raise ManifestError("num_chunks must be >= 1")

    rng = np.random.default_rng(seed)
    factors = rng.uniform(low, high, size=num_chunks)
    mbps = np.asarray(ladder.bitrates_kbps, dtype=np.float64) / 1000.0
    sizes = np.round(factors[:, None] * mbps[None, :] * chunk_duration_s, _SIZE_DECIMALS)
    return VideoManifest(ladder=ladder, chunk_duration_s=chunk_duration_s, chunk_sizes_mb=sizes)


def save_manifest(manifest: VideoManifest, path) -> None:
    """Write the plain-text tabular manifest format.

    Line 1: chunk_duration_s=<float>; line 2: comma-separated bitrates in
    Kbps; then one row per chunk of comma-separated sizes in Mb with 6
    decimal digits.
    """
    lines = [f"chunk_duration_s={manifest.chunk_duration_s!r}"]
    lines.append(",".join(str(b) for b in manifest.ladder.bitrates_kbps))
    for row in manifest.chunk_sizes_mb:
        lines.append(",".join(f"{v:.6f}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path) -> VideoManifest:
    """Parse a manifest file; raises ManifestError naming the offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = [ln.strip() for ln in fh if ln.strip()]
    if len(raw_lines) < 3:
        raise ManifestError(f"{path}: expected header, bitrate row and at least one chunk row")

    header = raw_lines[0]
    if not header.startswith("chunk_duration_s="):
        raise ManifestError(f"{path}: line 1: expected 'chunk_duration_s=<float>', got {header!r}")
    try:
        chunk_duration_s = float(header.split("=", 1)[1])
    except ValueError as exc:
        raise ManifestError(f"{path}: line 1: bad chunk duration: {exc}") from exc

    try:
        bitrates = tuple(int(tok) for tok in raw_lines[1].split(","))
    except ValueError as exc:
        raise ManifestError(f"{path}: line 2: bad bitrate row: {exc}") from exc
    ladder = QualityLadder(bitrates)

    rows = []
    for idx, line in enumerate(raw_lines[2:], start=3):
        toks = line.split(",")
        if len(toks) != len(bitrates):
            raise ManifestError(
                f"{path}: line {idx}: expected {len(bitrates)} size columns, got {len(toks)}"
            )
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise ManifestError(f"{path}: line {idx}: bad size value: {exc}") from exc

    return VideoManifest(
        ladder=ladder,
        chunk_duration_s=chunk_duration_s,
        chunk_sizes_mb=np.asarray(rows, dtype=np.float64),
    )
