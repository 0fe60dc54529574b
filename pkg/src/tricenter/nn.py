"""Feature extractor MLP, linear classifier head, Adam, and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DataFormatError, ShapeError

_ACTIVATIONS = {"relu": Tensor.relu, "tanh": Tensor.tanh}


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class FeatureExtractor:
    """MLP mapping input rows to embedding rows.

    ``layer_sizes`` runs from the input width to the embedding dimension.
    The named activation is applied between layers; the embedding layer has
    no activation and embeddings are not normalized.
    """

    def __init__(self, layer_sizes, activation: str = "relu", rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ContractError(f"layer_sizes must hold >= 2 positive extents, got {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.activation = activation
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            self.weights.append(Tensor(glorot_uniform(n_in, n_out, rng), requires_grad=True))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def forward(self, batch: Tensor) -> Tensor:
        if not isinstance(batch, Tensor):
            batch = Tensor(batch)
        if batch.data.ndim != 2 or batch.data.shape[1] != self.in_dim:
            raise ShapeError(
                f"expected batch of shape [B, {self.in_dim}], got {batch.data.shape}")
        act = _ACTIVATIONS[self.activation]
        x = batch
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i != last:
                x = act(x)
        return x

    __call__ = forward

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ContractError("state length does not match parameter count")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise ShapeError(f"state shape {a.shape} does not match parameter {p.data.shape}")
            p.data = np.array(a, dtype=np.float64)


class LinearHead:
    """Single linear layer producing class logits from embeddings."""

    def __init__(self, in_dim: int, n_classes: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.weight = Tensor(glorot_uniform(in_dim, n_classes, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(n_classes), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def forward(self, embeddings: Tensor) -> Tensor:
        return embeddings @ self.weight + self.bias

    __call__ = forward

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data = np.array(a, dtype=np.float64)


class Adam:
    """Bias-corrected Adam over a list of parameter Tensors.

    Defaults follow the training protocol used throughout this project:
    learning rate 1e-4, beta1 0.9, beta2 0.99, epsilon 1e-8.
    """

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.99, epsilon: float = 1e-8):
        if lr <= 0 or epsilon <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1):
            raise ContractError("Adam hyperparameters out of range")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """Apply one update from the gradients currently stored on the parameters."""
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError("adam step with a missing gradient; run backward first")
            if p.grad.shape != p.data.shape:
                raise ShapeError("gradient shape does not match parameter shape")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


# ---------------------------------------------------------------------------
# Checkpoint container.
#
# Layout (version 1), all integers little-endian:
#   bytes 0..3   magic b"TCK1"
#   bytes 4..7   uint32 header length H
#   bytes 8..8+H utf-8 JSON header
#   remainder    the arrays listed in header["arrays"], concatenated as raw
#                little-endian float64, C order
# The header records epoch, config fingerprint, extractor topology, optional
# head and center-table metadata, and the name/shape of every array.
# ---------------------------------------------------------------------------

_MAGIC = b"TCK1"


@dataclass
class Checkpoint:
    extractor: FeatureExtractor
    epoch: int
    config_fingerprint: str
    head: LinearHead | None = None
    center_matrix: np.ndarray | None = None
    center_mode: str | None = None
    center_source_epoch: int | None = None
    extra: dict = field(default_factory=dict)


def config_fingerprint(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = []
    entries = []

    def add(name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        arrays.append(arr)
        entries.append({"name": name, "shape": list(arr.shape)})

    for i, arr in enumerate(ckpt.extractor.state()):
        add(f"extractor.{i}", arr)
    if ckpt.head is not None:
        for i, arr in enumerate(ckpt.head.state()):
            add(f"head.{i}", arr)
    if ckpt.center_matrix is not None:
        add("centers", ckpt.center_matrix)

    header = {
        "version": 1,
        "epoch": int(ckpt.epoch),
        "config_fingerprint": ckpt.config_fingerprint,
        "extractor": {"layer_sizes": ckpt.extractor.layer_sizes,
                      "activation": ckpt.extractor.activation},
        "head": None if ckpt.head is None else {"n_classes": int(ckpt.head.bias.data.size)},
        "centers": None if ckpt.center_matrix is None else {
            "mode": ckpt.center_mode, "source_epoch": ckpt.center_source_epoch},
        "extra": ckpt.extra,
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != 1:
            raise DataFormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
        loaded = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataFormatError(f"{path}: truncated checkpoint payload")
            loaded[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    meta = header["extractor"]
    extractor = FeatureExtractor(meta["layer_sizes"], activation=meta["activation"])
    n_ext = len(extractor.parameters())
    extractor.load_state([loaded[f"extractor.{i}"] for i in range(n_ext)])

    head = None
    if header["head"] is not None:
        head = LinearHead(extractor.out_dim, header["head"]["n_classes"])
        head.load_state([loaded["head.0"], loaded["head.1"]])

    centers = loaded.get("centers")
    cmeta = header["centers"] or {}
    return Checkpoint(
        extractor=extractor,
        epoch=header["epoch"],
        config_fingerprint=header["config_fingerprint"],
        head=head,
        center_matrix=centers,
        center_mode=cmeta.get("mode"),
        center_source_epoch=cmeta.get("source_epoch"),
        extra=header.get("extra", {}),
    )


def params_fingerprint(arrays) -> str:
    """Stable hash of a parameter state, used to pin center provenance."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]
