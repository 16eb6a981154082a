"""Synthetic layer stacks with planted per-layer complexity, and data pools for them.

Every matrix of layer i is a product of two seeded Gaussian factors of inner
size r_i, so a small r_i confines what the layer can read and write to an
r_i-dimensional subspace. The MLP runs in tanh saturation and its output gain
grows with r_i: full-rank layers write large, bounded, highly varied vectors
onto the residual stream, while low-rank layers barely move it.
"""

from __future__ import annotations

import numpy as np

from .container import IMAGE_TOKEN
from .net import LINEARS, LayerStack, StackConfig, forward

QK_GAIN = 1.0
VALUE_GAIN = 1.0
OUT_GAIN = 0.25
SATURATION = 3.0
MLP_GAIN = 8.0


def mlp_gain(r: int, d: int) -> float:
    return MLP_GAIN * (r / d) ** 1.25


def low_rank(rng: np.random.Generator, rows: int, cols: int, r: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((rows, r))
    b = rng.standard_normal((r, cols))
    return (gain * (a @ b) / np.sqrt(r * cols)).astype(np.float32)


def synth_stack(L: int, d: int, complexity_profile, seed: int, heads: int = 4, ff_dim: int | None = None,
                vocab_size: int = 64, positions: bool = True) -> LayerStack:
    """Deterministic L-layer stack; layer i has complexity rank ``complexity_profile[i]``."""
    profile = [int(r) for r in complexity_profile]
    if len(profile) != L:
        raise ValueError(f"complexity profile has {len(profile)} entries for {L} layers")
    if any(r < 1 or r > d for r in profile):
        raise ValueError(f"complexity ranks must lie in [1, {d}]")
    ff = 2 * d if ff_dim is None else ff_dim
    config = StackConfig(L, d, heads, ff, vocab_size, positions)
    rng = np.random.default_rng(seed)
    layers = []
    for r in profile:
        gains = {"wq": QK_GAIN, "wk": QK_GAIN, "wv": VALUE_GAIN, "wo": OUT_GAIN,
                 "w1": SATURATION, "w2": mlp_gain(r, d)}
        shapes = config.weight_shapes()
        layers.append({n: low_rank(rng, *shapes[n], r, gains[n]) for n in LINEARS})
    embed = rng.standard_normal((vocab_size, d)).astype(np.float32)
    head = rng.standard_normal((vocab_size, d)).astype(np.float32)
    return LayerStack(config, embed, head, layers)


def gaussian_inputs(n: int, seq_len: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, seq_len, d)).astype(np.float32)


# ------------------------------------------------------------------ data pools


def image_embeddings(n: int, length: int, d: int, seed: int, modality_seed: int = 0,
                     rank: int = 4, scale: float = 3.0) -> np.ndarray:
    """Stand-in for connector outputs: a shifted, strongly anisotropic Gaussian.

    The modality (``modality_seed``) fixes a ``rank``-dimensional subspace and
    a common offset; ``seed`` draws samples from it. Its second moments differ
    sharply from those of text embeddings.
    """
    mod = np.random.default_rng([modality_seed, 0x1A6E])
    basis = np.linalg.qr(mod.standard_normal((d, rank)))[0]
    offset = basis @ mod.standard_normal(rank)
    rng = np.random.default_rng([seed, 0x1A6F])
    z = rng.standard_normal((n, length, rank))
    noise = 0.3 * rng.standard_normal((n, length, d))
    return (scale * (z @ basis.T + offset) + noise).astype(np.float32)


def teacher_continue(stack: LayerStack, embeds: np.ndarray, ids: np.ndarray, start: int,
                     rng: np.random.Generator, explore: float) -> np.ndarray:
    """Fill ``ids[:, start:]`` with the stack's own greedy predictions.

    With probability ``explore`` a position gets a uniformly random token
    instead, which keeps the pool diverse.
    """
    V = stack.config.vocab_size
    ids = ids.copy()
    embeds = embeds.copy()
    for t in range(start, ids.shape[1]):
        if t == 0:
            nxt = rng.integers(V, size=ids.shape[0])
        else:
            _, logits = forward(stack, embeds[:, :t])
            nxt = logits[:, -1].argmax(-1)
            wild = rng.random(ids.shape[0]) < explore
            nxt = np.where(wild, rng.integers(V, size=ids.shape[0]), nxt)
        ids[:, t] = nxt
        embeds[:, t] = stack.embed[nxt]
    return ids


def text_pool(stack: LayerStack, n: int, seq_len: int, seed: int, explore: float = 0.25) -> np.ndarray:
    """Token sequences the stack itself would write, as u32 ids [n, seq_len]."""
    rng = np.random.default_rng([seed, 0x7E47])
    d = stack.config.hidden_dim
    ids = np.zeros((n, seq_len), dtype=np.int64)
    embeds = np.zeros((n, seq_len, d), dtype=np.float32)
    return teacher_continue(stack, embeds, ids, 0, rng, explore).astype(np.uint32)


def multimodal_pool(stack: LayerStack, n: int, seq_len: int, seed: int, prefix: int | None = None,
                    explore: float = 0.25, modality_seed: int = 0):
    """Image-prefixed sequences: ``(embeds [n, N, d], ids [n, N])``.

    The first ``prefix`` positions are image embeddings (their id slot holds
    the image marker); the rest is a text continuation written by the stack.
    """
    prefix = seq_len // 2 if prefix is None else prefix
    if not 0 < prefix < seq_len:
        raise ValueError("image prefix must leave room for a text continuation")
    d = stack.config.hidden_dim
    rng = np.random.default_rng([seed, 0x33D1])
    embeds = np.zeros((n, seq_len, d), dtype=np.float32)
    embeds[:, :prefix] = image_embeddings(n, prefix, d, seed, modality_seed)
    ids = np.zeros((n, seq_len), dtype=np.int64)
    ids = teacher_continue(stack, embeds, ids, prefix, rng, explore)
    for t in range(prefix, seq_len):
        embeds[:, t] = stack.embed[ids[:, t]]
    out_ids = ids.astype(np.uint32)
    out_ids[:, :prefix] = IMAGE_TOKEN
    embeds[:, prefix:] = 0.0
    return embeds, out_ids
