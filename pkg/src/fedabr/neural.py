"""Minimal dense network core: forward, exact backprop, Adam, flat weights.

Networks are tanh MLPs with a linear or softmax head. All parameters of a
network live in one contiguous float64 vector; per-layer weight matrices
and bias vectors are reshaped views into it, so optimizer updates on the
flat vector are immediately visible to the layers and flattening for
weight exchange is a plain copy. Everything is 64-bit for reproducibility.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HEAD_LINEAR = "linear"
HEAD_SOFTMAX = "softmax"


class ShapeError(ValueError):
    """Weight vector does not match the network layout it is applied to."""


@dataclass(frozen=True)
class MlpSpec:
    """Network layout; the flat parameter length is a pure function of it."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    head: str = HEAD_LINEAR
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be >= 1")
        if self.head not in (HEAD_LINEAR, HEAD_SOFTMAX):
            raise ValueError(f"unknown head {self.head!r}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())

    def spec_hash(self) -> str:
        key = f"mlp:{self.input_dim}:{','.join(map(str, self.hidden))}:{self.output_dim}:{self.head}:{self.activation}"
        return hashlib.sha256(key.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "head": self.head,
            "activation": self.activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            output_dim=int(d["output_dim"]),
            head=str(d["head"]),
            activation=str(d.get("activation", "tanh")),
        )


def _views(spec: MlpSpec, flat: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    Ws, bs = [], []
    off = 0
    for fan_in, fan_out in spec.layer_shapes():
        Ws.append(flat[off : off + fan_in * fan_out].reshape(fan_in, fan_out))
        off += fan_in * fan_out
        bs.append(flat[off : off + fan_out])
        off += fan_out
    return Ws, bs


def stable_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-stabilized; rows sum to 1."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Dense tanh network over one flat float64 parameter vector."""

    __slots__ = ("spec", "flat", "Ws", "bs")

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None) -> None:
        self.spec = spec
        n = spec.num_params()
        if flat is None:
            flat = np.zeros(n)
        else:
            flat = np.array(flat, dtype=np.float64)
            if flat.shape != (n,):
                raise ShapeError(f"flat vector of length {flat.size} does not match {n} parameters")
        self.flat = flat
        self.Ws, self.bs = _views(spec, flat)

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Network output for a single observation or a batch.

        With `want_cache`, also returns the intermediate activations needed
        by `backward`. A cache is single-use: `backward` consumes it.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        acts = [h]
        last = len(self.Ws) - 1
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            z = np.matmul(h, W)
            z += b
            h = z if i == last else np.tanh(z, out=z)
            acts.append(h)
        if self.spec.head == HEAD_SOFTMAX:
            out = stable_softmax(h)
        else:
            out = h
        if want_cache:
            return (out[0] if single else out), (acts, out)
        return out[0] if single else out

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Exact gradient of sum(grad_out * output) w.r.t. the flat parameters.

        `grad_out` is dLoss/dOutput evaluated at the cached forward pass; the
        softmax Jacobian is applied internally for softmax heads. The cache's
        intermediate buffers are clobbered in the process.
        """
        acts, out = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if self.spec.head == HEAD_SOFTMAX:
            # dL/dz = p * (g - sum(g * p)) for logits z and probabilities p.
            gz = out * (g - (g * out).sum(axis=1, keepdims=True))
        else:
            gz = g
        grad = np.empty_like(self.flat)
        gWs, gbs = _views(self.spec, grad)
        for i in range(len(self.Ws) - 1, -1, -1):
            h_in = acts[i]
            np.matmul(h_in.T, gz, out=gWs[i])
            np.sum(gz, axis=0, out=gbs[i])
            if i > 0:
                gh = np.matmul(gz, self.Ws[i].T)
                # tanh'(z) = 1 - h^2, built in place over the spent activation
                np.multiply(h_in, h_in, out=h_in)
                np.subtract(1.0, h_in, out=h_in)
                gz = np.multiply(gh, h_in, out=gh)
        return grad

    def copy_from(self, other: "Mlp") -> None:
        if other.spec != self.spec:
            raise ShapeError("cannot copy weights between different layouts")
        self.flat[:] = other.flat


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> Mlp:
    """Fan-in scaled uniform init, bound 1/sqrt(fan_in), for weights and biases."""
    net = Mlp(spec)
    for W, b in zip(net.Ws, net.bs):
        bound = 1.0 / np.sqrt(W.shape[0])
        W[:] = rng.uniform(-bound, bound, size=W.shape)
        b[:] = rng.uniform(-bound, bound, size=b.shape)
    return net


# ----------------------------- weight exchange -----------------------------


@dataclass(frozen=True)
class WeightVector:
    """Immutable flat parameters in canonical layer order, tagged by layout."""

    values: np.ndarray = field(repr=False)
    spec_hash: str

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def combined_hash(specs: Sequence[MlpSpec]) -> str:
    if len(specs) == 1:
        return specs[0].spec_hash()
    joined = "+".join(s.spec_hash() for s in specs)
    return hashlib.sha256(joined.encode()).hexdigest()[:12]


def flatten(net: Mlp) -> WeightVector:
    return WeightVector(values=net.flat.copy(), spec_hash=net.spec.spec_hash())


def unflatten(spec: MlpSpec, vector: WeightVector) -> Mlp:
    if vector.spec_hash != spec.spec_hash():
        raise ShapeError(
            f"weight vector layout {vector.spec_hash} does not match network layout {spec.spec_hash()}"
        )
    if len(vector) != spec.num_params():
        raise ShapeError(f"expected {spec.num_params()} parameters, got {len(vector)}")
    return Mlp(spec, vector.values)


def flatten_nets(nets: Sequence[Mlp]) -> WeightVector:
    values = np.concatenate([net.flat for net in nets])
    return WeightVector(values=values, spec_hash=combined_hash([n.spec for n in nets]))


def load_weights(nets: Sequence[Mlp], vector: WeightVector) -> None:
    """Write a (possibly multi-network) weight vector into `nets` in place."""
    expect = combined_hash([n.spec for n in nets])
    if vector.spec_hash != expect:
        raise ShapeError(f"weight vector layout {vector.spec_hash} does not match {expect}")
    total = sum(n.spec.num_params() for n in nets)
    if len(vector) != total:
        raise ShapeError(f"expected {total} parameters, got {len(vector)}")
    off = 0
    for net in nets:
        n = net.spec.num_params()
        net.flat[:] = vector.values[off : off + n]
        off += n


def unflatten_many(specs: Sequence[MlpSpec], vector: WeightVector) -> list[Mlp]:
    nets = [Mlp(spec) for spec in specs]
    load_weights(nets, vector)
    return nets


# --------------------------------- Adam ---------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    _scratch: np.ndarray = field(default=None, repr=False)


def make_adam(num_params: int, lr: float) -> AdamState:
    return AdamState(lr=lr, m=np.zeros(num_params), v=np.zeros(num_params), _scratch=np.empty(num_params))


def adam_step(state: AdamState, weights: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update, applied to `weights` in place.

    Uses the factored form of the bias correction,
    w -= lr * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps*sqrt(1-b2^t)),
    which is algebraically identical to dividing the corrected moments.
    """
    if grad.shape != weights.shape or state.m.shape != weights.shape:
        raise ShapeError("adam state, weights and gradient must share one shape")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grad)
    corr2 = math.sqrt(1.0 - b2**state.step)
    step_size = state.lr * corr2 / (1.0 - b1**state.step)
    denom = np.sqrt(state.v, out=state._scratch)
    denom += state.eps * corr2
    np.divide(state.m, denom, out=denom)
    denom *= step_size
    weights -= denom
    return weights


# ------------------------------ checkpoints ------------------------------

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    algo: str
    specs: list[MlpSpec]
    weights: WeightVector
    feature_scaling: dict
    meta: dict


def save_checkpoint(
    path,
    *,
    algo: str,
    specs: Sequence[MlpSpec],
    weights: WeightVector,
    feature_scaling: dict,
    meta: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "algo": algo,
        "specs": [s.to_dict() for s in specs],
        "spec_hash": weights.spec_hash,
        "weights": [float(v) for v in weights.values],
        "feature_scaling": feature_scaling,
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    specs = [MlpSpec.from_dict(d) for d in payload["specs"]]
    weights = WeightVector(
        values=np.asarray(payload["weights"], dtype=np.float64),
        spec_hash=payload["spec_hash"],
    )
    if weights.spec_hash != combined_hash(specs):
        raise ShapeError(f"{path}: weight hash does not match the stored layouts")
    return Checkpoint(
        algo=payload["algo"],
        specs=specs,
        weights=weights,
        feature_scaling=payload["feature_scaling"],
        meta=payload.get("meta", {}),
    )
