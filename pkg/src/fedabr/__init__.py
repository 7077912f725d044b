"""Federated deep-RL adaptive bitrate selection in a simulated DASH player."""

from .manifest import QualityLadder, VideoManifest, generate_manifest, load_manifest, save_manifest
from .traces import BandwidthTrace, TraceCorpus, TraceGroup, generate_corpus, load_trace_dir, save_corpus, split_corpus
from .simcore import ClientEnvConfig, PlayerState, StepOutcome, download_chunk, reset, run_episode
from .abrenv import AbrEnv, FeatureScaling, RewardParams, observation_dim, observe, reward, utility
from .neural import AdamState, Mlp, MlpSpec, WeightVector, adam_step, flatten, init_mlp, unflatten
from .fedserver import FedConfig, FederationResult, average_weights, build_registry, evaluate, run_federation

__version__ = "0.1.0"
