"""Federated orchestration: client sampling, local training, weight averaging.

Each round the server samples K clients uniformly, broadcasts the global
weights, lets every selected client train E local episodes on traces from
its own bandwidth group, and replaces the global weights with the
elementwise mean of the returned vectors. Client state that is not part of
the exchanged weights (replay memory, optimizer moments, exploration
schedule position) stays at the client across rounds. A held-out slice of
the training traces serves as a validation set for best-model tracking.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .abrenv import AbrEnv, FeatureScaling, RewardParams, reward, utility
from .agents import AgentConfig, TrainResult, greedy_policy, make_agent, net_specs
from .manifest import VideoManifest
from .neural import WeightVector, flatten_nets, init_mlp
from .seeding import substream
from .simcore import ClientEnvConfig, LevelChooser, run_episode
from .traces import BandwidthTrace, TraceCorpus, TraceGroup
from .abrenv import observation_dim

logger = logging.getLogger(__name__)

EVAL_RTT_S = 0.05  # fixed round-trip time for deterministic evaluation episodes


class FederationError(RuntimeError):
    """A round could not complete (for example, a client diverged)."""


@dataclass(frozen=True)
class FedConfig:
    algo: str = "dqn"
    num_clients: int = 100
    clients_per_round: int = 10
    local_episodes: int = 10
    rounds: int = 500
    seed: int = 0
    eval_cadence: int = 10
    validation_fraction: float = 0.1
    rtt_range_s: tuple[float, float] = (0.02, 0.2)
    max_buffer_s: float = 20.0

    def __post_init__(self) -> None:
        if not (1 <= self.clients_per_round <= self.num_clients):
            raise ValueError("need 1 <= clients_per_round <= num_clients")
        if self.rounds < 1 or self.local_episodes < 1:
            raise ValueError("rounds and local_episodes must be >= 1")


@dataclass
class ClientRecord:
    client_id: int
    group: TraceGroup
    env_cfg: ClientEnvConfig
    agent: object
    env: AbrEnv
    pool_ids: list[str]


@dataclass
class ClientRegistry:
    clients: list[ClientRecord]
    validation_traces: list[BandwidthTrace]
    manifest: VideoManifest
    reward_params: RewardParams
    scaling: FeatureScaling


@dataclass(frozen=True)
class RoundLog:
    round_index: int
    selected: tuple[int, ...]
    client_rewards: tuple[float, ...]  # mean episode reward per selected client
    global_reward: float
    wall_time_s: float


@dataclass
class FederationResult:
    final_weights: WeightVector
    round_logs: list[RoundLog]
    best_weights: WeightVector
    best_round: int
    best_val_reward: float


def build_registry(
    config: FedConfig,
    corpus: TraceCorpus,
    manifest: VideoManifest,
    reward_params: RewardParams = RewardParams(),
    scaling: FeatureScaling = FeatureScaling(),
    agent_config: AgentConfig | None = None,
) -> ClientRegistry:
    """Create clients round-robin over the four groups with seeded heterogeneity.

    Per group, a fraction of the training traces is held out for validation;
    clients sample training episodes only from the remainder.
    """
    groups = list(TraceGroup)
    pools: dict[TraceGroup, list[BandwidthTrace]] = {}
    validation: list[BandwidthTrace] = []
    val_rng = substream(config.seed, "validation")
    for group in groups:
        train = sorted(corpus.train_traces(group), key=lambda tr: tr.id)
        if not train:
            raise FederationError(f"group {group.value} has no training traces")
        n_val = int(round(config.validation_fraction * len(train)))
        n_val = min(n_val, len(train) - 1)
        picked = sorted(val_rng.choice(len(train), size=n_val, replace=False)) if n_val else []
        val_set = {train[i].id for i in picked}
        validation.extend(tr for tr in train if tr.id in val_set)
        pools[group] = [tr for tr in train if tr.id not in val_set]

    obs_dim = observation_dim(manifest.num_levels)
    rtt_rng = substream(config.seed, "registry")
    clients: list[ClientRecord] = []
    for cid in range(config.num_clients):
        group = groups[cid % len(groups)]
        rtt = float(rtt_rng.uniform(*config.rtt_range_s))
        env_cfg = ClientEnvConfig(trace_group=group, rtt_s=rtt, max_buffer_s=config.max_buffer_s)
        pool = pools[group]
        episode_rng = substream(config.seed, "offsets", cid)

        def sample_trace(pool=pool, rng=episode_rng) -> BandwidthTrace:
            return pool[int(rng.integers(len(pool)))]

        env = AbrEnv(
            manifest,
            sample_trace,
            env_cfg,
            reward_params=reward_params,
            scaling=scaling,
            rng=episode_rng,
            start_offset_s=None,  # uniform random phase per episode
        )
        agent = make_agent(
            config.algo,
            obs_dim,
            manifest.num_levels,
            agent_config,
            substream(config.seed, "exploration", cid),
        )
        clients.append(
            ClientRecord(client_id=cid, group=group, env_cfg=env_cfg, agent=agent, env=env, pool_ids=[t.id for t in pool])
        )
    return ClientRegistry(
        clients=clients,
        validation_traces=sorted(validation, key=lambda tr: tr.id),
        manifest=manifest,
        reward_params=reward_params,
        scaling=scaling,
    )


def select_clients(registry: ClientRegistry, k: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample of k distinct client ids, returned sorted."""
    n = len(registry.clients)
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    ids = rng.choice(n, size=k, replace=False)
    return sorted(int(i) for i in ids)


def average_weights(vectors: list[WeightVector]) -> WeightVector:
    """Exact elementwise arithmetic mean of same-layout weight vectors."""
    if not vectors:
        raise ValueError("cannot average an empty list of weight vectors")
    spec_hash = vectors[0].spec_hash
    length = len(vectors[0])
    for v in vectors[1:]:
        if v.spec_hash != spec_hash or len(v) != length:
            raise ValueError("weight vectors with mixed layouts cannot be averaged")
    stacked = np.stack([v.values for v in vectors])
    return WeightVector(values=stacked.mean(axis=0), spec_hash=spec_hash)


def _initial_weights(config: FedConfig, registry: ClientRegistry) -> WeightVector:
    obs_dim = observation_dim(registry.manifest.num_levels)
    agent_cfg = registry.clients[0].agent.config
    specs = net_specs(config.algo, obs_dim, registry.manifest.num_levels, agent_cfg)
    nets = [init_mlp(spec, substream(config.seed, "init", i)) for i, spec in enumerate(specs)]
    return flatten_nets(nets)


def run_federation(
    config: FedConfig,
    registry: ClientRegistry,
    corpus: TraceCorpus,
    manifest: VideoManifest,
) -> FederationResult:
    """Synchronous weight-averaging loop with periodic validation checkpoints."""
    selection_rng = substream(config.seed, "selection")
    global_weights = _initial_weights(config, registry)
    agent_cfg = registry.clients[0].agent.config
    specs = net_specs(config.algo, observation_dim(manifest.num_levels), manifest.num_levels, agent_cfg)

    logs: list[RoundLog] = []
    best_weights = global_weights
    best_round = 0
    best_val = -np.inf

    for t in range(1, config.rounds + 1):
        started = time.perf_counter()
        selected = select_clients(registry, config.clients_per_round, selection_rng)
        results: list[TrainResult] = []
        client_rewards: list[float] = []
        for cid in selected:
            client = registry.clients[cid]
            result = client.agent.train_episodes(client.env, global_weights, config.local_episodes)
            if not np.all(np.isfinite(result.weights.values)):
                raise FederationError(f"client {cid} produced non-finite weights in round {t}")
            results.append(result)
            client_rewards.append(float(np.mean(result.episode_rewards)))
        global_weights = average_weights([r.weights for r in results])

        log = RoundLog(
            round_index=t,
            selected=tuple(selected),
            client_rewards=tuple(client_rewards),
            global_reward=float(np.mean(client_rewards)),
            wall_time_s=time.perf_counter() - started,
        )
        logs.append(log)
        logger.info(
            "round %d/%d reward %.4f (%.2fs)", t, config.rounds, log.global_reward, log.wall_time_s
        )

        if t % config.eval_cadence == 0 or t == config.rounds:
            policy = greedy_policy(global_weights, specs, registry.scaling)
            val = _mean_policy_reward(policy, registry.validation_traces, registry)
            logger.info("round %d validation reward %.4f", t, val)
            if val > best_val:
                best_val = val
                best_weights = global_weights
                best_round = t

    return FederationResult(
        final_weights=global_weights,
        round_logs=logs,
        best_weights=best_weights,
        best_round=best_round,
        best_val_reward=float(best_val),
    )


# -------------------------------- evaluation --------------------------------


@dataclass(frozen=True)
class EvalRow:
    trace_id: str
    group: TraceGroup
    mean_reward: float
    mean_utility: float
    mean_switch_penalty: float
    mean_rebuffer_s: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    overall_mean: float
    group_means: dict[str, float]
    utility_mean: float
    switch_penalty_mean: float
    rebuffer_s_mean: float


def _episode_metrics(
    policy: LevelChooser,
    trace: BandwidthTrace,
    manifest: VideoManifest,
    reward_params: RewardParams,
    max_buffer_s: float,
) -> tuple[float, float, float, float]:
    env_cfg = ClientEnvConfig(trace_group=trace.group, rtt_s=EVAL_RTT_S, max_buffer_s=max_buffer_s)
    levels: list[int] = []

    def recording(state, mani):
        levels.append(policy(state, mani))
        return levels[-1]

    outcomes = run_episode(manifest, trace, env_cfg, recording, start_offset_s=0.0)
    ladder = manifest.ladder
    rewards, utils, switches, rebuffers = [], [], [], []
    for n, (level, out) in enumerate(zip(levels, outcomes)):
        prev = levels[n - 1] if n > 0 else level
        rewards.append(reward(prev, level, out.rebuffer_s, reward_params, ladder))
        q_cur = utility(ladder.bitrates_kbps[level], ladder)
        q_prev = utility(ladder.bitrates_kbps[prev], ladder)
        utils.append(q_cur)
        switches.append(reward_params.alpha * abs(q_prev - q_cur))
        rebuffers.append(out.rebuffer_s)
    n_chunks = len(outcomes)
    return (
        sum(rewards) / n_chunks,
        sum(utils) / n_chunks,
        sum(switches) / n_chunks,
        sum(rebuffers) / n_chunks,
    )


def evaluate(
    policy: LevelChooser,
    corpus: TraceCorpus,
    manifest: VideoManifest,
    *,
    which: str = "Test",
    reward_params: RewardParams = RewardParams(),
    max_buffer_s: float = 20.0,
) -> EvalReport:
    """Run the policy once per trace in the chosen split (offset 0, fixed rtt)."""
    traces = sorted(corpus.subset(which), key=lambda tr: tr.id)
    if not traces:
        raise ValueError(f"corpus has no traces labeled {which!r}")
    rows = []
    for trace in traces:
        mean_r, mean_q, mean_sw, mean_rb = _episode_metrics(
            policy, trace, manifest, reward_params, max_buffer_s
        )
        rows.append(
            EvalRow(
                trace_id=trace.id,
                group=trace.group,
                mean_reward=mean_r,
                mean_utility=mean_q,
                mean_switch_penalty=mean_sw,
                mean_rebuffer_s=mean_rb,
            )
        )
    group_means = {}
    for group in TraceGroup:
        vals = [row.mean_reward for row in rows if row.group == group]
        if vals:
            group_means[group.value] = float(np.mean(vals))
    return EvalReport(
        rows=rows,
        overall_mean=float(np.mean([r.mean_reward for r in rows])),
        group_means=group_means,
        utility_mean=float(np.mean([r.mean_utility for r in rows])),
        switch_penalty_mean=float(np.mean([r.mean_switch_penalty for r in rows])),
        rebuffer_s_mean=float(np.mean([r.mean_rebuffer_s for r in rows])),
    )


def _mean_policy_reward(policy: LevelChooser, traces: list[BandwidthTrace], registry: ClientRegistry) -> float:
    total = 0.0
    for trace in traces:
        mean_r, _, _, _ = _episode_metrics(
            policy, trace, registry.manifest, registry.reward_params, registry.clients[0].env_cfg.max_buffer_s
        )
        total += mean_r
    return total / len(traces)
