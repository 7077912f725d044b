import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedabr.traces import (
    TEST,
    TRAIN,
    BandwidthTrace,
    TraceError,
    TraceGroup,
    generate_corpus,
    load_trace_dir,
    save_corpus,
    split_corpus,
    throughput_at,
)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(per_group_count=25, seed=5)


def test_group_counts_and_granularity(small_corpus):
    assert len(small_corpus.traces) == 4 * 25
    for trace in small_corpus.traces:
        gaps = np.diff(trace.t_s)
        expected = 10.0 if trace.group.is_fcc else 1.0
        assert np.allclose(gaps, expected)
        assert trace.t_s[0] == 0.0
        assert trace.duration_s >= 320.0


def test_group_mean_constraint_holds_for_all(small_corpus):
    for trace in small_corpus.traces:
        if trace.group.is_high_bandwidth:
            assert trace.mbps.mean() > 2.0
        else:
            assert trace.mbps.mean() < 2.0
        assert np.all(trace.mbps > 0)


def test_generation_deterministic(small_corpus):
    again = generate_corpus(per_group_count=25, seed=5)
    for a, b in zip(small_corpus.traces, again.traces):
        assert a.id == b.id and np.array_equal(a.mbps, b.mbps)


def test_full_scale_counts_and_split():
    # 1000 per group -> 4000 traces; an 80/20 split leaves 800 test episodes.
    corpus = generate_corpus(per_group_count=1000, seed=1)
    assert len(corpus.traces) == 4000
    corpus = split_corpus(corpus, 0.8, seed=1)
    assert sum(1 for v in corpus.split.values() if v == TEST) == 800
    for group in TraceGroup:
        assert len(corpus.train_traces(group)) == 800
        assert len(corpus.test_traces(group)) == 200


def test_split_is_partition(small_corpus):
    corpus = split_corpus(small_corpus, 0.8, seed=2)
    assert set(corpus.split) == {tr.id for tr in corpus.traces}
    for group in TraceGroup:
        assert len(corpus.train_traces(group)) == 20
        assert len(corpus.test_traces(group)) == 5


def test_split_two_traces_half():
    corpus = generate_corpus(per_group_count=2, seed=3)
    corpus = split_corpus(corpus, 0.5, seed=3)
    for group in TraceGroup:
        assert len(corpus.train_traces(group)) == 1
        assert len(corpus.test_traces(group)) == 1


def test_split_deterministic(small_corpus):
    a = split_corpus(small_corpus, 0.8, seed=9)
    b = split_corpus(small_corpus, 0.8, seed=9)
    c = split_corpus(small_corpus, 0.8, seed=10)
    assert a.split == b.split
    assert a.split != c.split


def test_split_rejects_tiny_group():
    corpus = generate_corpus(per_group_count=1, seed=0)
    with pytest.raises(TraceError, match="fewer than 2"):
        split_corpus(corpus, 0.8)


def test_split_rejects_bad_fraction(small_corpus):
    with pytest.raises(TraceError):
        split_corpus(small_corpus, 1.0)


def _tiny_trace(samples, group=TraceGroup.FCC_HIGH, trace_id="t"):
    t, v = zip(*samples)
    return BandwidthTrace(id=trace_id, group=group, t_s=np.array(t, float), mbps=np.array(v, float))


def test_throughput_at_piecewise_constant():
    trace = _tiny_trace([(0, 3), (10, 5)])
    assert throughput_at(trace, 4.0) == 3.0
    assert throughput_at(trace, 10.0) == 5.0  # half-open [t_i, t_{i+1})
    assert trace.duration_s == 20.0
    assert throughput_at(trace, trace.duration_s + 4.0) == 3.0  # wraps


def test_throughput_at_rejects_negative_time():
    trace = _tiny_trace([(0, 3), (10, 5)])
    with pytest.raises(TraceError):
        throughput_at(trace, -1.0)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(min_value=0, max_value=5000, allow_nan=False))
def test_wraparound_periodicity(t):
    trace = _tiny_trace([(0, 3), (7, 5), (11, 1)])
    assert throughput_at(trace, t) == throughput_at(trace, t + trace.duration_s)


def test_trace_validation():
    with pytest.raises(TraceError, match="start at 0"):
        _tiny_trace([(1, 3), (2, 4)])
    with pytest.raises(TraceError, match="strictly increasing"):
        _tiny_trace([(0, 3), (0, 4)])
    with pytest.raises(TraceError, match="> 0"):
        _tiny_trace([(0, 3), (10, 0)])


def test_round_trip_save_load(tmp_path, small_corpus):
    corpus = split_corpus(small_corpus, 0.8, seed=4)
    save_corpus(corpus, tmp_path)
    loaded = load_trace_dir(tmp_path)
    assert loaded.split == corpus.split
    by_id = {tr.id: tr for tr in loaded.traces}
    assert set(by_id) == {tr.id for tr in corpus.traces}
    for tr in corpus.traces:
        other = by_id[tr.id]
        assert other.group == tr.group
        assert np.array_equal(other.t_s, tr.t_s)
        assert np.array_equal(other.mbps, tr.mbps)


def test_hand_written_trace_file(tmp_path):
    gdir = tmp_path / "lte_low"
    gdir.mkdir()
    (gdir / "abc.csv").write_text("0.0,1.5\n1.0,0.7\n2.0,1.1\n")
    corpus = load_trace_dir(tmp_path)
    (trace,) = corpus.traces
    assert trace.id == "abc" and trace.group == TraceGroup.LTE_LOW
    assert np.array_equal(trace.t_s, [0.0, 1.0, 2.0])
    assert np.array_equal(trace.mbps, [1.5, 0.7, 1.1])


def test_zero_throughput_file_rejected(tmp_path):
    gdir = tmp_path / "fcc_low"
    gdir.mkdir()
    (gdir / "bad.csv").write_text("0.0,1.5\n10.0,0.0\n")
    with pytest.raises(TraceError, match="bad"):
        load_trace_dir(tmp_path)


def test_generator_rejects_bad_params():
    with pytest.raises(TraceError):
        generate_corpus(0)
    with pytest.raises(TraceError):
        generate_corpus(1, duration_s=100.0)
