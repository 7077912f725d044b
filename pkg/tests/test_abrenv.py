import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedabr.abrenv import (
    AbrEnv,
    FeatureScaling,
    RewardParams,
    observation_dim,
    observe,
    reward,
    utility,
)
from fedabr.manifest import QualityLadder, generate_manifest
from fedabr.simcore import ClientEnvConfig, download_chunk, reset
from fedabr.traces import BandwidthTrace, TraceGroup, generate_corpus

LADDER = QualityLadder()
PARAMS = RewardParams()


def constant_trace(mbps, duration=400.0):
    t = np.arange(0.0, duration, 10.0)
    return BandwidthTrace(id="c", group=TraceGroup.FCC_HIGH, t_s=t, mbps=np.full(t.size, float(mbps)))


def test_utility_reference_points():
    assert utility(700, LADDER) == 0.0
    assert utility(8000, LADDER) == pytest.approx(math.log(8000 / 700))
    assert utility(8000, LADDER) == pytest.approx(2.4361, abs=1e-4)


def test_utility_monotone_over_ladder():
    values = [utility(b, LADDER) for b in LADDER.bitrates_kbps]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_utility_rejects_off_ladder_bitrate():
    with pytest.raises(ValueError):
        utility(1234, LADDER)


def test_reward_zero_case():
    assert reward(0, 0, 0.0, PARAMS, LADDER) == 0.0


def test_reward_big_switch():
    # bottom -> top with no rebuffer: q_max - 2.6 * q_max = -1.6 * q_max
    expected = (1.0 - 2.6) * math.log(8000 / 700)
    assert reward(0, 6, 0.0, PARAMS, LADDER) == pytest.approx(expected)
    assert expected == pytest.approx(-3.8978, abs=1e-4)


def test_reward_rebuffer_term():
    assert reward(3, 3, 1.5, PARAMS, LADDER) == pytest.approx(utility(3000, LADDER) - 1.5)


def test_reward_rejects_negative_rebuffer():
    with pytest.raises(ValueError):
        reward(0, 0, -0.1, PARAMS, LADDER)


@settings(max_examples=100, deadline=None)
@given(
    prev=st.integers(0, 6),
    level=st.integers(0, 6),
    rebuffer=st.floats(0, 50, allow_nan=False),
)
def test_reward_bounds(prev, level, rebuffer):
    q_max = utility(8000, LADDER)
    r = reward(prev, level, rebuffer, PARAMS, LADDER)
    assert r <= q_max
    assert r >= -(PARAMS.alpha * q_max + PARAMS.beta * rebuffer)


def test_observation_layout_and_reset():
    manifest = generate_manifest(seed=1)
    scaling = FeatureScaling()
    state = reset(manifest, constant_trace(2.8), ClientEnvConfig())
    obs = observe(state, manifest, scaling)
    assert obs.shape == (22,)
    assert observation_dim(manifest.num_levels) == 22
    assert np.all(obs[:12] == 0.0)  # histories empty
    assert np.allclose(obs[12:19], manifest.chunk_sizes_mb[0] / 10.0)
    assert obs[19] == 0.0  # buffer
    assert obs[20] == 1.0  # 60 remaining / 60
    assert obs[21] == 0.0  # nothing downloaded yet


def test_observation_after_one_download():
    manifest = generate_manifest(size_factor_range=(1.0, 1.0), seed=0)
    scaling = FeatureScaling()
    state = reset(manifest, constant_trace(2.8), ClientEnvConfig())
    out = download_chunk(state, 0)
    obs = observe(state, manifest, scaling)
    assert obs[0] == pytest.approx(2.8 / 10.0)  # measured throughput slot
    assert obs[6] == pytest.approx(out.download_time_s / 10.0)
    assert obs[19] == pytest.approx(out.new_buffer_s / 20.0)
    assert 0.0 <= obs[19] <= 1.0
    assert obs[20] == pytest.approx(59 / 60)
    assert obs[21] == pytest.approx(0.7 / 8.0)


def test_observation_zero_padded_when_done():
    manifest = generate_manifest(num_chunks=1, seed=3)
    state = reset(manifest, constant_trace(5.0), ClientEnvConfig())
    download_chunk(state, 0)
    obs = observe(state, manifest, FeatureScaling())
    assert np.all(obs[12:19] == 0.0)
    assert obs[20] == 0.0


def make_env(manifest=None, trace=None, **kw):
    manifest = manifest or generate_manifest(seed=2)
    trace = trace or constant_trace(4.0)
    return AbrEnv(manifest, trace, ClientEnvConfig(), **kw)


def test_env_episode_done_at_last_chunk():
    env = make_env()
    env.reset()
    for n in range(60):
        _, _, done, _ = env.step(0)
        assert done == (n == 59)


def test_env_rejects_out_of_range_action():
    env = make_env()
    env.reset()
    with pytest.raises(ValueError):
        env.step(7)


def test_env_requires_reset():
    env = make_env()
    with pytest.raises(RuntimeError):
        env.step(0)


def test_env_rewards_match_direct_formula():
    # replay the reward from the outcome log with the formula written out
    corpus = generate_corpus(per_group_count=2, seed=8)
    manifest = generate_manifest(seed=8)
    rng = np.random.default_rng(5)
    alpha, beta, r_min = 2.6, 1.0, 700
    for trace in corpus.traces[::3]:
        env = AbrEnv(manifest, trace, ClientEnvConfig(trace_group=trace.group))
        env.reset()
        done = False
        prev_level = None
        while not done:
            action = int(rng.integers(manifest.num_levels))
            _, r, done, outcome = env.step(action)
            p = action if prev_level is None else prev_level
            q_cur = math.log(manifest.ladder.bitrates_kbps[action] / r_min)
            q_prev = math.log(manifest.ladder.bitrates_kbps[p] / r_min)
            expected = q_cur - alpha * abs(q_prev - q_cur) - beta * outcome.rebuffer_s
            assert r == expected  # exact, not approximate
            prev_level = action


def test_env_first_chunk_has_no_switch_penalty():
    env = make_env()
    env.reset()
    _, r, _, outcome = env.step(6)
    assert r == utility(8000, LADDER) - outcome.rebuffer_s


def test_env_observation_finite_and_fixed_length():
    env = make_env()
    obs = env.reset()
    rng = np.random.default_rng(0)
    done = False
    while not done:
        assert obs.shape == (22,) and np.all(np.isfinite(obs)) and np.all(obs >= 0)
        obs, _, done, _ = env.step(int(rng.integers(7)))


def test_env_trace_source_callable_and_random_offsets():
    corpus = generate_corpus(per_group_count=2, seed=4)
    manifest = generate_manifest(seed=4)
    pool = corpus.by_group(TraceGroup.LTE_HIGH)
    rng = np.random.default_rng(11)
    calls = []

    def source():
        calls.append(1)
        return pool[len(calls) % len(pool)]

    env = AbrEnv(manifest, source, ClientEnvConfig(), rng=rng, start_offset_s=None)
    env.reset()
    first_offset = env.state.start_offset_s
    env.reset()
    assert len(calls) == 2
    assert env.state.start_offset_s != first_offset  # fresh random phase
