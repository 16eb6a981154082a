"""Mixed-modal calibration sets and held-out evaluation splits.

A set holds whole, single-modality sequences of one length N. Text sequences
are token ids, embedded through the model's own table when the set is fed to
a stack. Multimodal sequences carry precomputed embeddings for their image
positions (marked ``IMAGE_TOKEN`` in the id slot) followed by an optional
text continuation, which is again embedded by the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .container import IMAGE_TOKEN, Container, load, save
from .net import LayerStack, embed_tokens
from .quant.tensor import Part

TEXT = "text"
MULTIMODAL = "multimodal"
IGNORE = -1  # target slot that is not scored


class EmptyPoolError(ValueError):
    pass


def multimodal_count(alpha: float, n_seqs: int) -> int:
    # the epsilon keeps exact decimal products (0.29 * 100) from rounding down a whole step
    return int(math.floor(alpha * n_seqs + 1e-9))


@dataclass
class CalibrationSet:
    modality: list  # per sequence, TEXT or MULTIMODAL
    text_ids: np.ndarray  # u32 [n_text, N]
    mm_ids: np.ndarray  # u32 [n_mm, N], IMAGE_TOKEN where the embedding is precomputed
    mm_embeds: np.ndarray  # f32 [n_mm, N, d], zero outside image positions
    seq_len: int
    hidden_dim: int
    alpha: float
    seed: int = 0

    def __post_init__(self):
        self.modality = list(self.modality)
        n_text = sum(m == TEXT for m in self.modality)
        n_mm = len(self.modality) - n_text
        if any(m not in (TEXT, MULTIMODAL) for m in self.modality):
            raise ValueError("modality tags must be 'text' or 'multimodal'")
        N, d = self.seq_len, self.hidden_dim
        self.text_ids = np.asarray(self.text_ids, dtype=np.uint32).reshape(n_text, N)
        self.mm_ids = np.asarray(self.mm_ids, dtype=np.uint32).reshape(n_mm, N)
        self.mm_embeds = np.asarray(self.mm_embeds, dtype=np.float32).reshape(n_mm, N, d)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.modality)

    @property
    def counts(self) -> dict:
        n_mm = sum(m == MULTIMODAL for m in self.modality)
        return {TEXT: len(self) - n_mm, MULTIMODAL: n_mm}

    def rows(self) -> list:
        """Per sequence, the row it occupies in its modality's arrays."""
        seen = {TEXT: 0, MULTIMODAL: 0}
        out = []
        for m in self.modality:
            out.append(seen[m])
            seen[m] += 1
        return out

    def token_ids(self) -> np.ndarray:
        """All ids [n, N] as int64, with -1 at image positions."""
        ids = np.empty((len(self), self.seq_len), dtype=np.int64)
        for j, (m, r) in enumerate(zip(self.modality, self.rows())):
            row = self.text_ids[r] if m == TEXT else self.mm_ids[r]
            ids[j] = np.where(row == IMAGE_TOKEN, -1, row.astype(np.int64))
        return ids

    def targets(self) -> np.ndarray:
        """Next-token targets [n, N]; ``IGNORE`` where nothing is scored.

        Position t predicts id t+1. Image positions are never targets, so a
        multimodal sequence is scored only on its text continuation.
        """
        ids = self.token_ids()
        tgt = np.full_like(ids, IGNORE)
        tgt[:, :-1] = ids[:, 1:]
        return tgt

    def inputs(self, stack: LayerStack) -> np.ndarray:
        """Embedded sequences [n, N, d] ready for the stack."""
        if stack.config.hidden_dim != self.hidden_dim:
            raise ValueError(f"calibration width {self.hidden_dim} does not match model width {stack.config.hidden_dim}")
        ids = self.token_ids()
        safe = np.where(ids < 0, 0, ids)
        x = embed_tokens(stack, safe)
        for j, (m, r) in enumerate(zip(self.modality, self.rows())):
            if m == MULTIMODAL:
                image = ids[j] < 0
                x[j, image] = self.mm_embeds[r, image]
        return x

    def subset(self, indices) -> "CalibrationSet":
        indices = [int(i) for i in indices]
        rows = self.rows()
        mod = [self.modality[i] for i in indices]
        t = [rows[i] for i in indices if self.modality[i] == TEXT]
        mm = [rows[i] for i in indices if self.modality[i] == MULTIMODAL]
        return CalibrationSet(mod, self.text_ids[t], self.mm_ids[mm], self.mm_embeds[mm],
                              self.seq_len, self.hidden_dim, self.alpha, self.seed)

    def describe(self) -> dict:
        return {"n_seqs": len(self), "seq_len": self.seq_len, "alpha": self.alpha, "seed": self.seed, **self.counts}


# ------------------------------------------------------------------ pools


def _text_chunks(pool, N: int) -> np.ndarray:
    seqs = [np.asarray(s).reshape(-1) for s in pool]
    if not seqs:
        return np.zeros((0, N), dtype=np.uint32)
    if all(s.size >= N for s in seqs):
        return np.stack([s[:N] for s in seqs]).astype(np.uint32)
    stream = np.concatenate(seqs)
    n = stream.size // N
    return stream[:n * N].reshape(n, N).astype(np.uint32)


def _mm_rows(pool, N: int):
    if pool is None:
        return None, None
    if isinstance(pool, tuple):
        embeds, ids = pool
        embeds = np.asarray(embeds, dtype=np.float32)
        ids = np.asarray(ids, dtype=np.uint32)
    else:
        embeds = np.asarray(pool, dtype=np.float32)
        ids = np.full(embeds.shape[:2], IMAGE_TOKEN, dtype=np.uint32)
    if embeds.ndim != 3 or ids.shape != embeds.shape[:2]:
        raise ValueError("multimodal pool must be embeddings [P, M, d] with ids [P, M]")
    if embeds.shape[0] and embeds.shape[1] < N:
        raise ValueError(f"multimodal pool sequences are shorter than seq_len={N}")
    ids = ids[:, :N]
    embeds = np.where((ids == IMAGE_TOKEN)[..., None], embeds[:, :N], 0.0).astype(np.float32)
    return embeds, ids


def _draw(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    if count <= size:
        return rng.choice(size, count, replace=False)
    return rng.integers(size, size=count)


def build_mixed_calibration(text_pool, mm_pool, n_seqs: int, seq_len: int, alpha: float, seed: int,
                            hidden_dim: int | None = None) -> CalibrationSet:
    """Sample ``floor(alpha * n_seqs)`` multimodal sequences and fill the rest with text.

    ``text_pool`` is a list or array of id sequences. ``mm_pool`` is either an
    embedding array [P, M, d] (all image positions) or a pair ``(embeds, ids)``
    whose ids hold ``IMAGE_TOKEN`` at image positions. Sequences are drawn
    without replacement when the pool is large enough; the final order is
    shuffled by ``seed``.
    """
    if seq_len <= 0:
        raise ValueError("seq_len must be positive")
    if n_seqs < 1:
        raise ValueError("n_seqs must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    n_mm = multimodal_count(alpha, n_seqs)
    n_text = n_seqs - n_mm
    embeds, ids = _mm_rows(mm_pool, seq_len)
    if hidden_dim is None:
        if embeds is None:
            raise ValueError("hidden_dim is needed when there is no multimodal pool")
        hidden_dim = embeds.shape[2]
    if embeds is not None and embeds.shape[2] != hidden_dim:
        raise ValueError(f"multimodal embeddings have width {embeds.shape[2]}, expected {hidden_dim}")
    text = _text_chunks(text_pool if text_pool is not None else [], seq_len)
    if np.any(text == IMAGE_TOKEN):
        raise ValueError("text pool holds the image marker id")
    if n_text and not len(text):
        raise EmptyPoolError("text pool is empty but the mix needs text sequences")
    if n_mm and (embeds is None or not len(embeds)):
        raise EmptyPoolError("multimodal pool is empty but the mix needs multimodal sequences")

    rng = np.random.default_rng(seed)
    mm_pick = _draw(rng, len(embeds), n_mm) if n_mm else np.zeros(0, dtype=np.int64)
    text_pick = _draw(rng, len(text), n_text) if n_text else np.zeros(0, dtype=np.int64)
    modality = [MULTIMODAL] * n_mm + [TEXT] * n_text
    modality = [modality[i] for i in rng.permutation(n_seqs)]
    d = hidden_dim
    return CalibrationSet(
        modality,
        text[text_pick] if n_text else np.zeros((0, seq_len), dtype=np.uint32),
        ids[mm_pick] if n_mm else np.zeros((0, seq_len), dtype=np.uint32),
        embeds[mm_pick] if n_mm else np.zeros((0, seq_len, d), dtype=np.float32),
        seq_len, d, float(alpha), int(seed),
    )


def split_holdout(cs: CalibrationSet, holdout_frac: float, seed: int):
    """Stratified split into ``(calib part, eval part)``.

    Each modality contributes ``round(frac * count)`` sequences to the eval
    part, so proportions are kept within one sequence per modality.
    """
    if not 0.0 < holdout_frac < 1.0:
        raise ValueError("holdout_frac must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    held = []
    for m in (TEXT, MULTIMODAL):
        idx = np.array([j for j, t in enumerate(cs.modality) if t == m], dtype=np.int64)
        n_eval = int(math.floor(holdout_frac * idx.size + 0.5))
        held.extend(rng.permutation(idx)[:n_eval].tolist())
    held = sorted(held)
    kept = sorted(set(range(len(cs))) - set(held))
    if not held or not kept:
        raise ValueError("split would leave one part empty")
    return cs.subset(kept), cs.subset(held)


# ------------------------------------------------------------------ files


def calib_to_container(cs: CalibrationSet) -> Container:
    config = {"seq_len": cs.seq_len, "hidden_dim": cs.hidden_dim, "alpha": cs.alpha,
              "seed": cs.seed, "modality": list(cs.modality)}
    tensors = {
        "text_ids": Part("u32", tuple(cs.text_ids.shape), np.ascontiguousarray(cs.text_ids)),
        "mm_ids": Part("u32", tuple(cs.mm_ids.shape), np.ascontiguousarray(cs.mm_ids)),
        "mm_embeds": Part("f32", tuple(cs.mm_embeds.shape), np.ascontiguousarray(cs.mm_embeds)),
    }
    return Container("calib", config, tensors)


def calib_from_container(c: Container) -> CalibrationSet:
    if c.kind != "calib":
        raise ValueError(f"expected a calibration container, got kind {c.kind!r}")
    cfg = c.config
    return CalibrationSet(cfg["modality"], c.tensors["text_ids"].data, c.tensors["mm_ids"].data,
                          c.tensors["mm_embeds"].data, cfg["seq_len"], cfg["hidden_dim"],
                          float(cfg["alpha"]), int(cfg.get("seed", 0)))


def save_calib(path, cs: CalibrationSet):
    save(path, calib_to_container(cs))


def load_calib(path) -> CalibrationSet:
    return calib_from_container(load(path))
