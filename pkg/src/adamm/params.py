"""Parameter store, initialization, Adam, gradient checking, checkpoints."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Value, backward


class ParamStore:
    """Named trainable tensors with seeded initialization.

    Tensor creation order is deterministic per network configuration, so a
    seed fixes every initial weight. 2-D tensors get Glorot-uniform init,
    everything else starts at zero.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, Value] = {}

    def tensor(self, name: str, shape: tuple, init: str = "auto") -> Value:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "auto":
            init = "glorot" if len(shape) == 2 else "zeros"
        if init == "glorot":
            fan_in, fan_out = shape[0], shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-limit, limit, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        v = Value(data)
        self.tensors[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for v in self.tensors.values():
            v.grad = None

    def n_params(self) -> int:
        return int(sum(v.data.size for v in self.tensors.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.tensors) - set(arrays)
        extra = set(arrays) - set(self.tensors)
        if missing or extra:
            raise ValueError(f"parameter name mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for k, v in self.tensors.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != v.data.shape:
                raise ValueError(f"parameter {k!r}: shape {a.shape} != {v.data.shape}")
            v.data = a.copy()


class MLP:
    """Fully connected stack, ReLU between layers, linear output."""

    def __init__(self, store: ParamStore, name: str, dims: list[int]):
        self.weights = []
        self.biases = []
        for i in range(len(dims) - 1):
            self.weights.append(store.tensor(f"{name}.w{i}", (dims[i], dims[i + 1])))
            self.biases.append(store.tensor(f"{name}.b{i}", (dims[i + 1],)))

    def __call__(self, x: Value) -> Value:
        from .autodiff import affine, relu

        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = affine(x, w, b)
            if i < len(self.weights) - 1:
                x = relu(x)
        return x


class Adam:
    """Adam with decoupled weight decay applied uniformly to all tensors."""

    def __init__(self, store: ParamStore, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.tensors.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.store.tensors.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def grad_check(loss_fn, store: ParamStore, tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    loss_fn rebuilds the graph from the store's current tensors and returns
    a scalar Value. Every entry of every tensor is perturbed, so keep the
    network small. Relative error uses |a - fd| / max(|a| + |fd|, 1e-8).
    """
    store.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise ValueError("grad_check: loss is non-finite")
    backward(loss)
    analytic = {k: (v.grad.copy() if v.grad is not None else np.zeros_like(v.data))
                for k, v in store.tensors.items()}

    report = GradCheckReport(0.0, {}, tolerance)
    for name, p in store.tensors.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - fd) / max(abs(a) + abs(fd), 1e-8)
            worst = max(worst, err)
        report.per_tensor[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report


# ---------------------------------------------------------------------------
# Checkpoints: canonical JSON with base64 little-endian float64 payloads.
# No timestamps, sorted keys, so identical state always gives identical bytes.


def _encode_array(a: np.ndarray) -> dict:
    # not ascontiguousarray: that would silently promote 0-d arrays to 1-d
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def checkpoint_bytes(arrays: dict[str, np.ndarray], extra: dict) -> bytes:
    doc = {
        "format": "adamm-checkpoint-v1",
        "tensors": {k: _encode_array(v) for k, v in arrays.items()},
        "extra": extra,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, arrays: dict[str, np.ndarray], extra: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(arrays, extra))
        fh.write(b"\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        doc = json.loads(fh.read().decode())
    if doc.get("format") != "adamm-checkpoint-v1":
        raise ValueError(f"{path}: not a recognized checkpoint file")
    arrays = {k: _decode_array(v) for k, v in doc["tensors"].items()}
    return arrays, doc["extra"]
