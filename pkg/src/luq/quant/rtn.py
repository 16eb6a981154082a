import numpy as np

from .tensor import group_bounds, make_uniform_tensor


def symmetric_scale(w: np.ndarray, bits: int) -> np.ndarray:
    """Per-row f32 scale ``max|w| / (2^(bits-1) - 1)`` for a column group."""
    qmax = 2 ** (bits - 1) - 1
    return (np.abs(w).max(axis=1) / qmax).astype(np.float32)


def quantize_column(w: np.ndarray, scale: np.ndarray, bits: int) -> np.ndarray:
    qmax = 2 ** (bits - 1) - 1
    safe = np.where(scale > 0, scale, 1).astype(np.float64)
    q = np.clip(np.rint(w / safe), -qmax, qmax)
    return np.where(scale > 0, q, 0).astype(np.int32)


def rtn_quantize(W, bits: int = 4, group_size: int = 128):
    """Round-to-nearest with symmetric per-row, per-column-group scales."""
    if bits not in (2, 3, 4):
        raise ValueError("bits must be 2, 3 or 4")
    W = np.asarray(W, dtype=np.float64)
    rows, cols = W.shape
    groups = group_bounds(cols, group_size)
    codes = np.zeros((rows, cols), dtype=np.int32)
    scales = np.zeros((rows, len(groups)), dtype=np.float32)
    for g, (lo, hi) in enumerate(groups):
        s = symmetric_scale(W[:, lo:hi], bits)
        scales[:, g] = s
        codes[:, lo:hi] = quantize_column(W[:, lo:hi], s[:, None], bits)
    return make_uniform_tensor("rtn", codes, scales, bits, group_size)
