"""Desk-scale transformer stack: forward pass and activation capture.

Each block is pre-norm causal attention followed by a pre-norm tanh MLP, both
added back onto the residual stream. Norms carry no parameters, so a layer
owns exactly six matrices (q, k, v, o, up, down), stored ``[out, in]``.
Everything runs in float32.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .quant.tensor import QuantizedTensor, dequantize

LINEARS = ("wq", "wk", "wv", "wo", "w1", "w2")
QUANT_TAGS = ("fp32", "rtn4", "gptq4", "bin")
NORM_EPS = 1e-6


class NumericOverflowError(FloatingPointError):
    pass


@dataclass(frozen=True)
class StackConfig:
    num_layers: int
    hidden_dim: int
    heads: int
    ff_dim: int
    vocab_size: int
    positions: bool = True

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "heads", "ff_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")

    def weight_shapes(self) -> dict:
        d, f = self.hidden_dim, self.ff_dim
        return {"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d), "w1": (f, d), "w2": (d, f)}

    @property
    def layer_params(self) -> int:
        return sum(a * b for a, b in self.weight_shapes().values())


@dataclass
class LayerStack:
    config: StackConfig
    embed: np.ndarray  # [vocab, d]
    head: np.ndarray  # [vocab, d]
    layers: list  # per layer: {name: ndarray | QuantizedTensor}
    tags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tags:
            self.tags = ["fp32"] * len(self.layers)
        if len(self.layers) != self.config.num_layers or len(self.tags) != len(self.layers):
            raise ValueError("layer count does not match config")
        for i, (layer, tag) in enumerate(zip(self.layers, self.tags)):
            if tag not in QUANT_TAGS:
                raise ValueError(f"unknown quant tag {tag!r}")
            for name in LINEARS:
                w = layer[name]
                fmt = w.format if isinstance(w, QuantizedTensor) else "fp32"
                if fmt != tag:
                    raise ValueError(f"layer {i} {name} stored as {fmt} but tagged {tag}")

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    def weight(self, i: int, name: str) -> np.ndarray:
        w = self.layers[i][name]
        if isinstance(w, QuantizedTensor):
            return dequantize(w)
        return w

    def with_layer(self, i: int, weights: dict, tag: str) -> "LayerStack":
        layers = list(self.layers)
        tags = list(self.tags)
        layers[i] = dict(weights)
        tags[i] = tag
        return LayerStack(self.config, self.embed, self.head, layers, tags)

    def dequantized(self) -> "LayerStack":
        layers = [{n: self.weight(i, n) for n in LINEARS} for i in range(self.num_layers)]
        return LayerStack(self.config, self.embed, self.head, layers, ["fp32"] * self.num_layers)

    def copy(self) -> "LayerStack":
        return copy.deepcopy(self)


def rms_norm(x: np.ndarray) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return (x / np.sqrt(ms + np.float32(NORM_EPS))).astype(np.float32)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(np.float32)


def embed_tokens(stack: LayerStack, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= stack.config.vocab_size):
        raise ValueError("token id out of range")
    return stack.embed[ids].astype(np.float32)


def block_inputs(stack: LayerStack, i: int, h: np.ndarray, weights: dict | None = None):
    """Run block ``i`` and also return the input seen by each of its linears."""
    W = weights if weights is not None else {n: stack.weight(i, n) for n in LINEARS}
    a = rms_norm(h)
    B, N, d = a.shape
    heads = stack.config.heads
    dh = d // heads
    q = (a @ W["wq"].T).reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    k = (a @ W["wk"].T).reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    v = (a @ W["wv"].T).reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
    scores = (q @ k.transpose(0, 1, 3, 2)) / np.float32(np.sqrt(dh))
    causal = np.triu(np.ones((N, N), dtype=bool), k=1)
    scores = np.where(causal, np.float32(-np.inf), scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p = p / p.sum(axis=-1, keepdims=True)
    ctx = (p @ v).transpose(0, 2, 1, 3).reshape(B, N, d).astype(np.float32)
    h = (h + ctx @ W["wo"].T).astype(np.float32)
    m = rms_norm(h)
    z = np.tanh(m @ W["w1"].T).astype(np.float32)
    h = (h + z @ W["w2"].T).astype(np.float32)
    seen = {"wq": a, "wk": a, "wv": a, "wo": ctx, "w1": m, "w2": z}
    return h, seen


def run_block(stack: LayerStack, i: int, h: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = block_inputs(stack, i, h)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"numeric overflow in layer {i + 1}")
    return out


def prepare_inputs(stack: LayerStack, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[-1] != stack.config.hidden_dim:
        raise ValueError(f"inputs must be [B, N, {stack.config.hidden_dim}]")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    if stack.config.positions:
        x = x + sinusoidal_positions(x.shape[1], x.shape[2])[None]
    return x.astype(np.float32)


def logits_from_hidden(stack: LayerStack, h: np.ndarray) -> np.ndarray:
    return (rms_norm(h) @ stack.head.T).astype(np.float32)


def forward(stack: LayerStack, x, capture: list | None = None):
    """Return ``(hidden [B,N,d], logits [B,N,vocab])``.

    If ``capture`` is a list, the residual-stream output of every block is
    appended to it in order.
    """
    h = prepare_inputs(stack, x)
    for i in range(stack.num_layers):
        h = run_block(stack, i, h)
        if capture is not None:
            capture.append(h)
    with np.errstate(over="ignore", invalid="ignore"):
        logits = logits_from_hidden(stack, h)
    if not np.all(np.isfinite(logits)):
        raise NumericOverflowError(f"numeric overflow in layer {stack.num_layers}")
    return h, logits


def capture_activations(stack: LayerStack, inputs, batch_size: int = 64) -> list:
    """Per-layer block outputs ``X_i`` of shape [n_seqs, N, d] for embedded inputs."""
    inputs = np.asarray(inputs, dtype=np.float32)
    per_layer = [[] for _ in range(stack.num_layers)]
    for lo in range(0, inputs.shape[0], batch_size):
        acts = []
        forward(stack, inputs[lo:lo + batch_size], capture=acts)
        for i, a in enumerate(acts):
            per_layer[i].append(a)
    return [np.concatenate(chunks, axis=0) for chunks in per_layer]
