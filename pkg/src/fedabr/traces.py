"""Bandwidth traces: synthesis, storage, train/test split, time lookup.

Traces come in four environment groups (two trace families x high/low
bandwidth). Synthetic traces follow a log-normal AR(1) process per group;
the broadband-style family is sampled at 10 s granularity, the cellular
family at 1 s. Group means are constrained (> 2 Mbps for the high groups,
< 2 Mbps for the low groups) by rejection resampling. Lookup is
piecewise-constant over half-open intervals [t_i, t_{i+1}) and wraps
around beyond the trace end so a fixed-length trace can serve episodes
that outlast it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .seeding import substream

MEAN_SPLIT_MBPS = 2.0  # boundary between the high- and low-bandwidth groups
MIN_DURATION_S = 320.0


class TraceError(ValueError):
    """Invalid trace data or malformed trace file."""


class TraceGroup(enum.Enum):
    FCC_HIGH = "fcc_high"
    FCC_LOW = "fcc_low"
    LTE_HIGH = "lte_high"
    LTE_LOW = "lte_low"

    @property
    def is_high_bandwidth(self) -> bool:
        return self in (TraceGroup.FCC_HIGH, TraceGroup.LTE_HIGH)

    @property
    def is_fcc(self) -> bool:
        return self in (TraceGroup.FCC_HIGH, TraceGroup.FCC_LOW)


# Per-group synthesis parameters: (log-mean target Mbps, log-sigma, AR(1) rho,
# sample granularity seconds). The broadband family is smoother (rho 0.9) and
# coarser; the cellular family is burstier (rho 0.7) at 1 s granularity.
_GROUP_PARAMS: dict[TraceGroup, tuple[float, float, float, float]] = {
    TraceGroup.FCC_HIGH: (4.5, 0.50, 0.9, 10.0),
    TraceGroup.FCC_LOW: (1.2, 0.50, 0.9, 10.0),
    TraceGroup.LTE_HIGH: (4.5, 0.60, 0.7, 1.0),
    TraceGroup.LTE_LOW: (1.2, 0.60, 0.7, 1.0),
}

TRAIN = "Train"
TEST = "Test"


@dataclass(frozen=True)
class BandwidthTrace:
    """Timestamped throughput series; timestamps strictly increasing from 0."""

    id: str
    group: TraceGroup
    t_s: np.ndarray = field(repr=False)
    mbps: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        t = np.asarray(self.t_s, dtype=np.float64)
        v = np.asarray(self.mbps, dtype=np.float64)
        if t.ndim != 1 or v.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise TraceError(f"trace {self.id}: timestamps/throughputs must be equal-length 1-D arrays")
        if t[0] != 0.0:
            raise TraceError(f"trace {self.id}: timestamps must start at 0")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise TraceError(f"trace {self.id}: timestamps must be strictly increasing")
        if not np.all(v > 0):
            raise TraceError(f"trace {self.id}: throughput must be > 0 at every sample")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "mbps", v)

    @cached_property
    def duration_s(self) -> float:
        # The final sample extends for one trailing gap equal to the last
        # observed spacing, which also defines the wraparound period.
        if self.t_s.size == 1:
            return float(self.t_s[0] + 1.0)
        return float(self.t_s[-1] + (self.t_s[-1] - self.t_s[-2]))

    @cached_property
    def segment_durations_s(self) -> np.ndarray:
        ends = np.append(self.t_s[1:], self.duration_s)
        out = ends - self.t_s
        out.flags.writeable = False
        return out

    @cached_property
    def cycle_capacity_mb(self) -> float:
        """Megabits deliverable over one full pass of the trace."""
        return float(np.dot(self.mbps, self.segment_durations_s))

    @cached_property
    def mean_mbps(self) -> float:
        return float(np.dot(self.mbps, self.segment_durations_s) / self.duration_s)


def throughput_at(trace: BandwidthTrace, t: float) -> float:
    """Piecewise-constant throughput at time t, wrapping modulo trace duration."""
    if t < 0:
        raise TraceError(f"time must be >= 0, got {t}")
    tm = math.fmod(t, trace.duration_s)
    idx = int(np.searchsorted(trace.t_s, tm, side="right")) - 1
    return float(trace.mbps[idx])


@dataclass
class TraceCorpus:
    """Traces plus an optional train/test assignment per trace id."""

    traces: list[BandwidthTrace]
    split: dict[str, str] = field(default_factory=dict)

    def by_group(self, group: TraceGroup) -> list[BandwidthTrace]:
        return [tr for tr in self.traces if tr.group == group]

    def subset(self, label: str, group: TraceGroup | None = None) -> list[BandwidthTrace]:
        out = [tr for tr in self.traces if self.split.get(tr.id) == label]
        if group is not None:
            out = [tr for tr in out if tr.group == group]
        return out

    def train_traces(self, group: TraceGroup | None = None) -> list[BandwidthTrace]:
        return self.subset(TRAIN, group)

    def test_traces(self, group: TraceGroup | None = None) -> list[BandwidthTrace]:
        return self.subset(TEST, group)


def _synthesize_trace(
    trace_id: str,
    group: TraceGroup,
    duration_s: float,
    granularity_s: float,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> BandwidthTrace:
    mean_target, sigma, rho, _ = _GROUP_PARAMS[group]
    mu = math.log(mean_target) - 0.5 * sigma * sigma
    n = int(math.ceil(duration_s / granularity_s))
    t = np.arange(n, dtype=np.float64) * granularity_s

    for _ in range(max_tries):
        # Stationary AR(1) in log space keeps the marginal LogNormal(mu, sigma).
        eps = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = mu + sigma * eps[0]
        innov = sigma * math.sqrt(1.0 - rho * rho)
        for i in range(1, n):
            x[i] = mu + rho * (x[i - 1] - mu) + innov * eps[i]
        v = np.exp(x)
        mean = float(v.mean())
        if group.is_high_bandwidth and mean > MEAN_SPLIT_MBPS:
            return BandwidthTrace(id=trace_id, group=group, t_s=t, mbps=v)
        if not group.is_high_bandwidth and mean < MEAN_SPLIT_MBPS:
            return BandwidthTrace(id=trace_id, group=group, t_s=t, mbps=v)
    raise TraceError(f"trace {trace_id}: could not satisfy the group mean constraint after {max_tries} tries")


def generate_corpus(
    per_group_count: int,
    duration_s: float = MIN_DURATION_S,
    seed: int = 0,
    *,
    fcc_granularity_s: float = 10.0,
    lte_granularity_s: float = 1.0,
) -> TraceCorpus:
    """Synthesize `per_group_count` traces for each of the four groups."""
    if per_group_count < 1:
        raise TraceError("per_group_count must be >= 1")
    if duration_s < MIN_DURATION_S:
        raise TraceError(f"duration_s must be >= {MIN_DURATION_S}")

    traces: list[BandwidthTrace] = []
    for group in TraceGroup:
        gran = fcc_granularity_s if group.is_fcc else lte_granularity_s
        rng = substream(seed, "traces", group.value)
        for i in range(per_group_count):
            traces.append(_synthesize_trace(f"{group.value}_{i:04d}", group, duration_s, gran, rng))
    return TraceCorpus(traces=traces)


def split_corpus(corpus: TraceCorpus, train_fraction: float, seed: int = 0) -> TraceCorpus:
    """Assign Train/Test per trace, stratified by group, deterministic per seed."""
    if not (0 < train_fraction < 1):
        raise TraceError(f"train_fraction must be in (0, 1), got {train_fraction}")
    split: dict[str, str] = {}
    for group in TraceGroup:
        members = corpus.by_group(group)
        if not members:
            continue
        if len(members) < 2:
            raise TraceError(f"group {group.value} has fewer than 2 traces, cannot split")
        ids = sorted(tr.id for tr in members)
        rng = substream(seed, "split", group.value)
        rng.shuffle(ids)
        n_train = int(round(train_fraction * len(ids)))
        n_train = min(max(n_train, 1), len(ids) - 1)
        for tid in ids[:n_train]:
            split[tid] = TRAIN
        for tid in ids[n_train:]:
            split[tid] = TEST
    return TraceCorpus(traces=list(corpus.traces), split=split)


def save_corpus(corpus: TraceCorpus, root) -> None:
    """Write one `t_s,mbps` CSV per trace under per-group directories."""
    root = Path(root)
    for trace in corpus.traces:
        gdir = root / trace.group.value
        gdir.mkdir(parents=True, exist_ok=True)
        with open(gdir / f"{trace.id}.csv", "w", encoding="utf-8") as fh:
            for t, v in zip(trace.t_s.tolist(), trace.mbps.tolist()):
                fh.write(f"{t!r},{v!r}\n")
    if corpus.split:
        with open(root / "split.csv", "w", encoding="utf-8") as fh:
            for tid in sorted(corpus.split):
                fh.write(f"{tid},{corpus.split[tid]}\n")


def _load_trace_file(path: Path, group: TraceGroup) -> BandwidthTrace:
    ts: list[float] = []
    vs: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != 2:
                raise TraceError(f"{path}: line {lineno}: expected 't_s,mbps', got {line!r}")
            try:
                ts.append(float(toks[0]))
                vs.append(float(toks[1]))
            except ValueError as exc:
                raise TraceError(f"{path}: line {lineno}: {exc}") from exc
    try:
        return BandwidthTrace(id=path.stem, group=group, t_s=np.asarray(ts), mbps=np.asarray(vs))
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from exc


def load_trace_dir(root) -> TraceCorpus:
    """Load a corpus saved by `save_corpus` (split manifest optional)."""
    root = Path(root)
    traces: list[BandwidthTrace] = []
    for group in TraceGroup:
        gdir = root / group.value
        if not gdir.is_dir():
            continue
        for path in sorted(gdir.glob("*.csv")):
            traces.append(_load_trace_file(path, group))
    if not traces:
        raise TraceError(f"{root}: no trace files found")

    split: dict[str, str] = {}
    split_path = root / "split.csv"
    if split_path.exists():
        known = {tr.id for tr in traces}
        with open(split_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                tid, _, label = line.partition(",")
                if label not in (TRAIN, TEST):
                    raise TraceError(f"{split_path}: line {lineno}: label must be {TRAIN} or {TEST}")
                if tid not in known:
                    raise TraceError(f"{split_path}: line {lineno}: unknown trace id {tid!r}")
                split[tid] = label
    return TraceCorpus(traces=traces, split=split)
