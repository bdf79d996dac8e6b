"""Two-head MLP (policy logits + state value) with explicit forward and
backward passes.

The architecture is fixed enough that a general autodiff tape would be
overkill: each head is a stack of dense layers, optionally with the first
layer applied per eNB with shared weights. Gradients are straight chain-rule
code, validated against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

HEADS = ("pol", "val")


@dataclass(frozen=True)
class PolicyArch:
    n_enbs: int = 3
    history_len: int = 16
    n_features: int = 2      # per eNB per timestep: power, count, Q-1 quantiles
    width: int = 256
    depth: int = 2           # hidden layers per head
    activation: str = "relu"
    enb_shared_first_layer: bool = False
    orthogonal_init: bool = False
    feature_depth: int = 0   # shared feature extractor; only 0 is implemented

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.feature_depth != 0:
            raise NotImplementedError("shared feature extractor (depth > 0) "
                                      "is reserved for future work")

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.n_enbs, self.history_len, self.n_features)

    @property
    def input_dim(self) -> int:
        return self.n_enbs * self.history_len * self.n_features

    @property
    def enb_dim(self) -> int:
        return self.history_len * self.n_features

    @property
    def n_actions(self) -> int:
        return 2 * self.n_enbs + 1

    def head_out_dim(self, head: str) -> int:
        return self.n_actions if head == "pol" else 1


def _layer_plan(arch: PolicyArch, head: str):
    """Dense-layer descriptors for one head, in forward order."""
    plan = []
    if arch.enb_shared_first_layer:
        plan.append({"key": f"{head}/shared", "in": arch.enb_dim,
                     "out": arch.width, "shared": True, "act": True})
        prev = arch.n_enbs * arch.width
        n_dense = arch.depth - 1
    else:
        prev = arch.input_dim
        n_dense = arch.depth
    for i in range(n_dense):
        plan.append({"key": f"{head}/dense{i}", "in": prev, "out": arch.width,
                     "shared": False, "act": True})
        prev = arch.width
    plan.append({"key": f"{head}/out", "in": prev,
                 "out": arch.head_out_dim(head), "shared": False, "act": False})
    return plan


def _orthogonal_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((rows, cols) if rows >= cols else (cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_params(arch: PolicyArch, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    hidden_gain = math.sqrt(2.0) if arch.activation == "relu" else 5.0 / 3.0
    params: dict[str, np.ndarray] = {}
    for head in HEADS:
        for layer in _layer_plan(arch, head):
            fan_in, fan_out = layer["in"], layer["out"]
            if arch.orthogonal_init:
                if layer["act"]:
                    gain = hidden_gain
                else:
                    gain = 0.01 if head == "pol" else 1.0
                w = gain * _orthogonal_matrix(rng, fan_in, fan_out)
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
                if not layer["act"] and head == "pol":
                    w = w * 0.01  # start close to a uniform policy
            params[layer["key"] + "/W"] = w
            params[layer["key"] + "/b"] = np.zeros(fan_out)
    return params


def zero_params(arch: PolicyArch) -> dict[str, np.ndarray]:
    params = init_params(arch, seed=0)
    return {k: np.zeros_like(v) for k, v in params.items()}


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)


def _activation_grad(z: np.ndarray, h: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - h * h


def _as_batch(arch: PolicyArch, obs) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != arch.obs_shape:
        raise ValueError(f"observation shape {x.shape[1:]} does not match "
                         f"architecture {arch.obs_shape}")
    return x, single


def _head_forward(params, arch, head, x, cache=None):
    batch = x.shape[0]
    h = x.reshape(batch, arch.n_enbs, arch.enb_dim) \
        if arch.enb_shared_first_layer else x.reshape(batch, arch.input_dim)
    for layer in _layer_plan(arch, head):
        w = params[layer["key"] + "/W"]
        b = params[layer["key"] + "/b"]
        z = h @ w + b
        out = _activate(z, arch.activation) if layer["act"] else z
        if cache is not None:
            cache.append((layer, h, z, out))
        if layer["shared"]:
            out = out.reshape(batch, arch.n_enbs * arch.width)
        h = out
    return h


def forward(params: dict, arch: PolicyArch, obs):
    """Policy logits and value estimate; accepts a single observation or a
    batch. Deterministic; raises on shape mismatch."""
    x, single = _as_batch(arch, obs)
    logits = _head_forward(params, arch, "pol", x)
    values = _head_forward(params, arch, "val", x)[:, 0]
    if single:
        return logits[0], float(values[0])
    return logits, values


def forward_cached(params: dict, arch: PolicyArch, obs):
    """Batched forward keeping every intermediate needed by backward()."""
    x, _ = _as_batch(arch, obs)
    caches = {}
    outs = {}
    for head in HEADS:
        caches[head] = []
        outs[head] = _head_forward(params, arch, head, x, cache=caches[head])
    return outs["pol"], outs["val"][:, 0], caches


def enb_embeddings(params: dict, arch: PolicyArch, obs, head: str = "pol"):
    """Per-eNB first-layer activations (batch, n_enbs, width); only defined
    when the shared first layer is enabled."""
    if not arch.enb_shared_first_layer:
        raise ValueError("architecture has no shared per-eNB layer")
    x, single = _as_batch(arch, obs)
    h = x.reshape(x.shape[0], arch.n_enbs, arch.enb_dim)
    layer = _layer_plan(arch, head)[0]
    z = h @ params[layer["key"] + "/W"] + params[layer["key"] + "/b"]
    emb = _activate(z, arch.activation)
    return emb[0] if single else emb


def _head_backward(params, arch, head, cache, dout):
    grads = {}
    grad = dout
    for idx in range(len(cache) - 1, -1, -1):
        layer, h, z, out = cache[idx]
        if layer["shared"]:
            grad = grad.reshape(out.shape)
        if layer["act"]:
            grad = grad * _activation_grad(z, out, arch.activation)
        wkey, bkey = layer["key"] + "/W", layer["key"] + "/b"
        if layer["shared"]:
            # fold batch and eNB axes together: weights are shared across eNBs
            grads[wkey] = np.einsum("bni,bnj->ij", h, grad)
            grads[bkey] = grad.sum(axis=(0, 1))
        else:
            grads[wkey] = h.T @ grad
            grads[bkey] = grad.sum(axis=0)
        if idx > 0:  # the input gradient of the first layer is never used
            grad = grad @ params[wkey].T
    return grads


def backward(params: dict, arch: PolicyArch, caches: dict,
             dlogits: np.ndarray, dvalues: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(logits) and d(loss)/d(value)."""
    grads = _head_backward(params, arch, "pol", caches["pol"], dlogits)
    grads.update(_head_backward(params, arch, "val", caches["val"],
                                dvalues[:, None]))
    return grads


# -- distribution helpers -----------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_actions(logits: np.ndarray, rng: np.random.Generator):
    """Categorical draw per row; returns (actions, log-probs)."""
    logp = log_softmax(logits)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random(logits.shape[0])
    actions = (u[:, None] > cdf).sum(axis=-1)
    actions = np.minimum(actions, logits.shape[-1] - 1)
    return actions, logp[np.arange(len(actions)), actions]


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


# -- flat views (finite differences, gradient clipping) -------------------------


def param_spec(params: dict) -> list[tuple[str, tuple]]:
    return [(k, params[k].shape) for k in sorted(params)]


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten_params(vec: np.ndarray, spec) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for key, shape in spec:
        size = int(np.prod(shape, dtype=int)) if shape else 1
        out[key] = vec[pos:pos + size].reshape(shape).copy()
        pos += size
    return out


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, arch: PolicyArch, params: dict, meta: dict | None = None):
    """Self-describing .npz: architecture + flat arrays with a key manifest."""
    keys = sorted(params)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": asdict(arch),
        "keys": keys,
        "meta": meta or {},
    }
    arrays = {f"arr_{i}": params[k] for i, k in enumerate(keys)}
    with open(path, "wb") as fh:  # keep the exact path (np.savez appends .npz)
        np.savez(fh, __header__=np.frombuffer(
            json.dumps(header).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[PolicyArch, dict[str, np.ndarray], dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError("unsupported checkpoint version "
                             f"{header.get('format_version')}")
        arch = PolicyArch(**header["arch"])
        params = {k: data[f"arr_{i}"].copy()
                  for i, k in enumerate(header["keys"])}
    return arch, params, header.get("meta", {})
