"""Command-line front end: asset generation, training, evaluation, reporting.

Every training run writes its fully resolved configuration next to its
outputs; re-running from that file alone reproduces the round logs and
evaluation tables bit for bit. All randomness flows from one master seed
per run through named substreams.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .abrenv import FeatureScaling, RewardParams
from .agents import ALGO_CONFIGS, greedy_policy, net_specs
from .baselines import (
    constant_policy,
    default_bola_params,
    make_bola_chooser,
    make_throughput_chooser,
)
from .fedserver import FedConfig, build_registry, evaluate, run_federation
from .manifest import (
    DEFAULT_BITRATES_KBPS,
    QualityLadder,
    generate_manifest,
    load_manifest,
    save_manifest,
)
from .neural import load_checkpoint, save_checkpoint
from .traces import generate_corpus, load_trace_dir, save_corpus, split_corpus

logger = logging.getLogger(__name__)

BASELINE_NAMES = ("constant", "thghput", "bola")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to replay a training run exactly."""

    algo: str
    seeds: tuple[int, ...]
    clients_per_round: int
    local_episodes: int
    rounds: int
    num_clients: int
    eval_cadence: int
    validation_fraction: float
    traces_dir: str
    manifest_path: str
    out_dir: str
    alpha: float = 2.6
    beta: float = 1.0
    max_buffer_s: float = 20.0
    rtt_range_s: tuple[float, float] = (0.02, 0.2)
    scaling: dict | None = None

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["rtt_range_s"] = list(self.rtt_range_s)
        return json.dumps(d, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        d = json.loads(text)
        d["seeds"] = tuple(int(s) for s in d["seeds"])
        d["rtt_range_s"] = tuple(float(v) for v in d["rtt_range_s"])
        return ExperimentConfig(**d)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# -------------------------------- gen-traces --------------------------------


def cmd_gen_traces(args) -> int:
    corpus = generate_corpus(args.per_group, duration_s=args.duration, seed=args.seed)
    corpus = split_corpus(corpus, args.train_fraction, seed=args.seed)
    save_corpus(corpus, args.out)
    for group in sorted({tr.group for tr in corpus.traces}, key=lambda g: g.value):
        members = corpus.by_group(group)
        mean = float(np.mean([tr.mean_mbps for tr in members]))
        n_train = len(corpus.train_traces(group))
        n_test = len(corpus.test_traces(group))
        print(f"{group.value}: {len(members)} traces, mean {mean:.3f} Mbps, split {n_train}/{n_test}")
    return 0


# ------------------------------- gen-manifest -------------------------------


def cmd_gen_manifest(args) -> int:
    ladder = QualityLadder(tuple(int(b) for b in args.bitrates.split(",")))
    manifest = generate_manifest(
        ladder=ladder,
        num_chunks=args.chunks,
        chunk_duration_s=args.chunk_duration,
        size_factor_range=(args.factor_low, args.factor_high),
        seed=args.seed,
    )
    save_manifest(manifest, args.out)
    print(f"wrote {manifest.num_chunks}-chunk, {manifest.num_levels}-level manifest to {args.out}")
    return 0


# ---------------------------------- train ----------------------------------


def _round_log_lines(logs) -> str:
    lines = ["round,selected,client_rewards,global_reward"]
    for log in logs:
        sel = ";".join(str(c) for c in log.selected)
        rew = ";".join(repr(r) for r in log.client_rewards)
        lines.append(f"{log.round_index},{sel},{rew},{log.global_reward!r}")
    return "\n".join(lines) + "\n"


def _agent_config_for(cfg: ExperimentConfig, num_chunks: int):
    config_cls = ALGO_CONFIGS[cfg.algo]
    if cfg.algo == "dqn":
        # Exploration anneals over the client's expected local step count.
        horizon = int(
            cfg.rounds * (cfg.clients_per_round / cfg.num_clients) * cfg.local_episodes * num_chunks
        )
        return config_cls(anneal_horizon_steps=max(horizon, 1))
    return config_cls()


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    """One federated run per seed; returns the per-run output directories."""
    corpus = load_trace_dir(cfg.traces_dir)
    manifest = load_manifest(cfg.manifest_path)
    scaling = FeatureScaling(**cfg.scaling) if cfg.scaling else FeatureScaling()
    reward_params = RewardParams(alpha=cfg.alpha, beta=cfg.beta)
    agent_config = _agent_config_for(cfg, manifest.num_chunks)

    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    _write(out_root / "config.json", cfg.to_json())

    run_dirs = []
    for seed in cfg.seeds:
        run_dir = out_root / f"run_{seed}"
        run_dirs.append(run_dir)
        if (run_dir / "final.json").exists():
            logger.info("run_%d already complete, skipping", seed)
            continue
        run_dir.mkdir(parents=True, exist_ok=True)
        run_cfg = dataclasses.replace(cfg, seeds=(seed,), out_dir=str(run_dir))
        _write(run_dir / "config.json", run_cfg.to_json())

        fed_cfg = FedConfig(
            algo=cfg.algo,
            num_clients=cfg.num_clients,
            clients_per_round=cfg.clients_per_round,
            local_episodes=cfg.local_episodes,
            rounds=cfg.rounds,
            seed=seed,
            eval_cadence=cfg.eval_cadence,
            validation_fraction=cfg.validation_fraction,
            rtt_range_s=cfg.rtt_range_s,
            max_buffer_s=cfg.max_buffer_s,
        )
        registry = build_registry(fed_cfg, corpus, manifest, reward_params, scaling, agent_config)
        result = run_federation(fed_cfg, registry, corpus, manifest)

        _write(run_dir / "round_log.csv", _round_log_lines(result.round_logs))
        specs = net_specs(cfg.algo, registry.clients[0].env.obs_dim, manifest.num_levels, agent_config)
        scaling_dict = dataclasses.asdict(scaling)
        save_checkpoint(
            run_dir / "best.json",
            algo=cfg.algo,
            specs=specs,
            weights=result.best_weights,
            feature_scaling=scaling_dict,
            meta={"seed": seed, "round": result.best_round, "val_reward": result.best_val_reward},
        )
        save_checkpoint(
            run_dir / "final.json",
            algo=cfg.algo,
            specs=specs,
            weights=result.final_weights,
            feature_scaling=scaling_dict,
            meta={"seed": seed, "round": cfg.rounds},
        )
        logger.info("run_%d done: best round %d (val %.4f)", seed, result.best_round, result.best_val_reward)
    return run_dirs


def cmd_train(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
        if args.out:
            cfg = dataclasses.replace(cfg, out_dir=args.out)
    else:
        missing = [name for name in ("traces", "manifest", "out") if not getattr(args, name)]
        if missing:
            raise SystemExit(f"train: missing required flags: {', '.join('--' + m for m in missing)}")
        cfg = ExperimentConfig(
            algo=args.algo,
            seeds=tuple(int(s) for s in args.seeds.split(",")),
            clients_per_round=args.k,
            local_episodes=args.e,
            rounds=args.rounds,
            num_clients=args.clients,
            eval_cadence=args.eval_cadence,
            validation_fraction=args.validation_fraction,
            traces_dir=args.traces,
            manifest_path=args.manifest,
            out_dir=args.out,
        )
    run_dirs = run_experiment(cfg)
    for rd in run_dirs:
        print(f"run complete: {rd}")
    return 0


# ----------------------------------- eval -----------------------------------


def _group_cols(report) -> list[str]:
    cols = []
    for key in ("fcc_high", "fcc_low", "lte_high", "lte_low"):
        cols.append(repr(report.group_means.get(key, float("nan"))))
    return cols


def cmd_eval(args) -> int:
    corpus = load_trace_dir(args.traces)
    manifest = load_manifest(args.manifest)
    reward_params = RewardParams()

    rows: list[tuple[str, list]] = []  # (policy name, list of EvalReport)
    baselines = [b for b in (args.baselines.split(",") if args.baselines else []) if b]
    for name in baselines:
        if name == "constant":
            policy = constant_policy(manifest.ladder)
        elif name == "thghput":
            policy = make_throughput_chooser()
        elif name == "bola":
            policy = make_bola_chooser(default_bola_params(manifest, args.max_buffer))
        else:
            raise SystemExit(f"eval: unknown baseline {name!r} (choose from {','.join(BASELINE_NAMES)})")
        report = evaluate(policy, corpus, manifest, reward_params=reward_params, max_buffer_s=args.max_buffer)
        rows.append((name, [report]))

    by_algo: dict[str, list] = {}
    for model_path in args.models or []:
        ckpt = load_checkpoint(model_path)
        scaling = FeatureScaling(**ckpt.feature_scaling)
        policy = greedy_policy(ckpt.weights, ckpt.specs, scaling)
        report = evaluate(policy, corpus, manifest, reward_params=reward_params, max_buffer_s=args.max_buffer)
        by_algo.setdefault(ckpt.algo, []).append(report)
    for algo in sorted(by_algo):
        rows.append((algo, by_algo[algo]))

    header = (
        "policy,n_runs,overall_mean,overall_std,"
        "fcc_high_mean,fcc_low_mean,lte_high_mean,lte_low_mean,"
        "utility_mean,switch_penalty_mean,rebuffer_s_mean"
    )
    lines = [header]
    for name, reports in rows:
        overall = np.array([rep.overall_mean for rep in reports])
        mean_groups = {
            key: float(np.mean([rep.group_means.get(key, float("nan")) for rep in reports]))
            for key in ("fcc_high", "fcc_low", "lte_high", "lte_low")
        }
        std = float(np.std(overall)) if len(reports) > 1 else 0.0
        lines.append(
            ",".join(
                [
                    name,
                    str(len(reports)),
                    repr(float(np.mean(overall))),
                    repr(std),
                    repr(mean_groups["fcc_high"]),
                    repr(mean_groups["fcc_low"]),
                    repr(mean_groups["lte_high"]),
                    repr(mean_groups["lte_low"]),
                    repr(float(np.mean([rep.utility_mean for rep in reports]))),
                    repr(float(np.mean([rep.switch_penalty_mean for rep in reports]))),
                    repr(float(np.mean([rep.rebuffer_s_mean for rep in reports]))),
                ]
            )
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
        print(f"wrote {len(rows)} policy rows to {args.out}")
    else:
        print(text, end="")
    return 0


# ---------------------------------- report ----------------------------------


def read_round_log(path) -> list[float]:
    rewards = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        col = header.index("global_reward")
        for line in fh:
            if line.strip():
                rewards.append(float(line.strip().split(",")[col]))
    return rewards


def running_average(series: list[float], window: int) -> list[float]:
    """Mean of the trailing `window` values; plain prefix mean before that."""
    out = []
    acc = 0.0
    for i, v in enumerate(series):
        acc += v
        if i >= window:
            acc -= series[i - window]
        out.append(acc / min(i + 1, window))
    return out


def cmd_report(args) -> int:
    runs = [read_round_log(p) for p in args.logs]
    n_rounds = min(len(r) for r in runs)
    runs = [r[:n_rounds] for r in runs]
    smoothed = np.array([running_average(r, args.window) for r in runs])
    raw_mean = np.mean(np.array(runs), axis=0)
    mean_s = smoothed.mean(axis=0)
    std_s = smoothed.std(axis=0)
    lines = ["round,mean_reward,running_avg,std"]
    for t in range(n_rounds):
        lines.append(f"{t + 1},{raw_mean[t]!r},{mean_s[t]!r},{std_s[t]!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
        print(f"wrote smoothed convergence for {len(runs)} runs to {args.out}")
    else:
        print(text, end="")
    return 0


# ----------------------------------- main -----------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedabr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-traces", help="synthesize and split a bandwidth-trace corpus")
    g.add_argument("--per-group", dest="per_group", type=int, required=True)
    g.add_argument("--duration", type=float, default=320.0)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_traces)

    m = sub.add_parser("gen-manifest", help="synthesize a video manifest")
    m.add_argument("--chunks", type=int, default=60)
    m.add_argument("--chunk-duration", dest="chunk_duration", type=float, default=4.0)
    m.add_argument("--factor-low", dest="factor_low", type=float, default=0.3)
    m.add_argument("--factor-high", dest="factor_high", type=float, default=0.9)
    m.add_argument("--bitrates", default=",".join(str(b) for b in DEFAULT_BITRATES_KBPS))
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_gen_manifest)

    t = sub.add_parser("train", help="run federated training (one run per seed)")
    t.add_argument("--config", help="replay a saved experiment config")
    t.add_argument("--algo", choices=sorted(ALGO_CONFIGS), default="dqn")
    t.add_argument("--k", type=int, default=10, help="clients selected per round")
    t.add_argument("--e", type=int, default=10, help="local episodes per selected client")
    t.add_argument("--rounds", type=int, default=500)
    t.add_argument("--seeds", default="1", help="comma-separated master seeds, one run each")
    t.add_argument("--clients", type=int, default=100)
    t.add_argument("--eval-cadence", dest="eval_cadence", type=int, default=10)
    t.add_argument("--validation-fraction", dest="validation_fraction", type=float, default=0.1)
    t.add_argument("--traces")
    t.add_argument("--manifest")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints and baselines on the test split")
    e.add_argument("--models", nargs="*", default=[])
    e.add_argument("--baselines", default="constant,thghput,bola")
    e.add_argument("--traces", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--max-buffer", dest="max_buffer", type=float, default=20.0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="smooth round logs into a plot-ready CSV")
    r.add_argument("--logs", nargs="+", required=True)
    r.add_argument("--window", type=int, default=20)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    return p


_blas_limiter = None


def limit_blas_threads() -> None:
    """The work here is many tiny matmuls; BLAS thread pools only add overhead."""
    global _blas_limiter
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    if _blas_limiter is None:
        _blas_limiter = threadpool_limits(limits=1)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    limit_blas_threads()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
