"""Gaussian MLP policy with a separate value network over one flat parameter vector.

Layout of the flat vector, in order::

    policy:  W1 b1 W2 b2 ... W_out b_out     (tanh hidden layers, linear mean head)
    log_std: one entry per action dimension  (state independent)
    value:   W1 b1 W2 b2 ... W_out b_out     (tanh hidden layers, scalar head)

Weights are stored row-major with shape (fan_out, fan_in).
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import rng as rngmod


class ArchMismatch(ValueError):
    pass


class AlphaOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class NetArch:
    obs_dim: int
    action_dim: int
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ValueError("hidden must list at least one layer width")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "action_dim": self.action_dim,
                "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d) -> "NetArch":
        return cls(int(d["obs_dim"]), int(d["action_dim"]), tuple(d["hidden"]), d.get("activation", "tanh"))


def _mlp_shapes(sizes):
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.append(((fan_out, fan_in), "W"))
        shapes.append(((fan_out,), "b"))
    return shapes


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple
    start: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def stop(self) -> int:
        return self.start + self.size


def layout(arch: NetArch) -> list[Segment]:
    segs, offset = [], 0

    def add(name, shape):
        nonlocal offset
        segs.append(Segment(name, shape, offset))
        offset += int(np.prod(shape))

    pol = [arch.obs_dim, *arch.hidden, arch.action_dim]
    for i, (shape, kind) in enumerate(_mlp_shapes(pol)):
        add(f"pi.{kind}{i // 2}", shape)
    add("log_std", (arch.action_dim,))
    val = [arch.obs_dim, *arch.hidden, 1]
    for i, (shape, kind) in enumerate(_mlp_shapes(val)):
        add(f"v.{kind}{i // 2}", shape)
    return segs


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat policy+value parameters tagged with the architecture hash.

    Values are stored as float32 so checkpoints round-trip bit-exactly;
    training works on a float64 copy.
    """

    arch_hash: str
    values: np.ndarray
    lineage: tuple = field(default=())

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float32, copy=True).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter vector contains non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lineage", tuple(self.lineage))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.arch_hash == other.arch_hash and np.array_equal(self.values, other.values)

    __hash__ = None

    def __len__(self):
        return len(self.values)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


def _check(params: ParamVector, arch: NetArch) -> None:
    if params.arch_hash != arch.hash:
        raise ArchMismatch(f"parameters built for arch {params.arch_hash}, got {arch.hash}")
    if len(params) != n_params(arch):
        raise ArchMismatch("parameter length does not match architecture")


def init_params(arch: NetArch, seed, lineage=None) -> ParamVector:
    """Glorot-uniform weights, zero biases, zero log-std; deterministic in (arch, seed)."""
    key = seed if isinstance(seed, tuple) else (seed,)
    gen = rngmod.stream(*key, "init-params")
    values = np.zeros(n_params(arch))
    for seg in layout(arch):
        if seg.name.split(".")[-1].startswith("W"):
            fan_out, fan_in = seg.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[seg.start:seg.stop] = gen.uniform(-limit, limit, size=seg.size)
    tag = lineage if lineage is not None else (f"init:{':'.join(map(str, key))}",)
    return ParamVector(arch.hash, values, tag)


def fuse(theta_best: ParamVector, theta_0: ParamVector, alpha: float) -> ParamVector:
    """Element-wise ``alpha * theta_best + (1 - alpha) * theta_0``."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"fusion ratio must be in [0, 1], got {alpha}")
    if theta_best.arch_hash != theta_0.arch_hash or len(theta_best) != len(theta_0):
        raise ArchMismatch("cannot fuse parameters of different architectures")
    values = alpha * theta_best.as_float64() + (1.0 - alpha) * theta_0.as_float64()
    return ParamVector(theta_best.arch_hash, values, (f"fuse:{alpha!r}",))


class Net:
    """Unpacked float64 views over a flat vector, with forward and backward passes."""

    def __init__(self, arch: NetArch, flat: np.ndarray):
        self.arch = arch
        self.flat = flat
        self.segs = _segment_map(arch)
        self.depth = len(arch.hidden) + 1
        self.layers = {prefix: self._layers(prefix, flat) for prefix in ("pi", "v")}
        self.log_std = self.view("log_std")

    def view(self, name: str, arr=None) -> np.ndarray:
        start, stop, shape = self.segs[name]
        arr = self.flat if arr is None else arr
        return arr[start:stop].reshape(shape)

    def _layers(self, prefix, arr):
        return [(self.view(f"{prefix}.W{i}", arr), self.view(f"{prefix}.b{i}", arr))
                for i in range(self.depth)]

    def _mlp(self, prefix, x):
        acts = [x]
        h = x
        last = self.depth - 1
        for i, (w, b) in enumerate(self.layers[prefix]):
            z = h @ w.T
            z += b
            h = np.tanh(z) if i < last else z
            acts.append(h)
        return h, acts

    def _mlp_backward(self, prefix, acts, grad_out, grad):
        layers = self.layers[prefix]
        glayers = self._layers(prefix, grad)
        g = grad_out
        for i in range(self.depth - 1, -1, -1):
            if i < self.depth - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw, gb = glayers[i]
            gw += g.T @ acts[i]
            gb += g.sum(axis=0)
            if i > 0:
                g = g @ layers[i][0]

    def policy(self, obs):
        return self._mlp("pi", obs)

    def value(self, obs):
        v, acts = self._mlp("v", obs)
        return v[:, 0], acts

    def policy_backward(self, acts, grad_mean, grad):
        self._mlp_backward("pi", acts, grad_mean, grad)

    def value_backward(self, acts, grad_value, grad):
        self._mlp_backward("v", acts, grad_value[:, None], grad)


@lru_cache(maxsize=None)
def _segment_map(arch: NetArch) -> dict:
    return {s.name: (s.start, s.stop, s.shape) for s in layout(arch)}


@lru_cache(maxsize=None)
def n_params(arch: NetArch) -> int:
    return layout(arch)[-1].stop


def forward(params: ParamVector, arch: NetArch, obs):
    """Return ``(action_mean, action_log_std, value)`` for one observation or a batch."""
    _check(params, arch)
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    if obs.shape[-1] != arch.obs_dim:
        raise ArchMismatch(f"observation has dim {obs.shape[-1]}, arch expects {arch.obs_dim}")
    batch = obs[None, :] if single else obs
    net = Net(arch, params.as_float64())
    mean, _ = net.policy(batch)
    value, _ = net.value(batch)
    log_std = net.log_std.copy()
    if single:
        return mean[0], log_std, float(value[0])
    return mean, log_std, value


CHECKPOINT_FORMAT = "coevolve-params/1"


def save_checkpoint(path, params: ParamVector, arch: NetArch) -> None:
    _check(params, arch)
    payload = params.values.astype("<f4").tobytes()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": arch.to_dict(),
        "arch_hash": params.arch_hash,
        "length": len(params),
        "lineage": list(params.lineage),
        "payload": base64.b64encode(payload).decode("ascii"),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ParamVector, NetArch]:
    doc = json.loads(Path(path).read_text())
    arch = NetArch.from_dict(doc["arch"])
    values = np.frombuffer(base64.b64decode(doc["payload"]), dtype="<f4")
    if len(values) != doc["length"] or doc["arch_hash"] != arch.hash:
        raise ArchMismatch(f"corrupt checkpoint {path}")
    return ParamVector(doc["arch_hash"], values, tuple(doc.get("lineage", ()))), arch
