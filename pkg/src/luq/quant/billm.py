"""Residual binarization with salient columns (BiLLM-style, ~1.1 bits/weight).

Per block of input columns:

* salient columns (ranked once by ``sum_rows w^2 / [H^-1]_jj``) get two
  sign/scale passes, the second one on the residual of the first;
* the remaining columns are split by mean magnitude into a concentrated and a
  sparse group, the split point chosen from a scanned grid to minimise the
  total binarization error, and each group gets its own ``mean|w|`` scale;
* codes are assigned column by column on the error-compensated weights,
  exactly as in :mod:`luq.quant.gptq`.

Group membership is stored per column, which keeps the realized cost near
1.1 bits/weight including every scale and index.
"""

import numpy as np

from .gptq import inverse_cholesky
from .hessian import as_matrix
from .packing import packedbin_nbytes
from .tensor import QuantizedTensor, bit_part, f32_part, u32_part


def binarize_group(w):
    """L2-optimal binary approximation ``beta * sign(w)`` of a group."""
    w = np.asarray(w, dtype=np.float64)
    beta = float(np.mean(np.abs(w))) if w.size else 0.0
    signs = np.where(w >= 0, 1.0, -1.0)
    return beta, beta * signs


def residual_binarize(w):
    """Two sign/scale passes; returns ``(beta1, beta2, reconstruction)``."""
    beta1, first = binarize_group(w)
    beta2, second = binarize_group(np.asarray(w, dtype=np.float64) - first)
    return beta1, beta2, first + second


def payload_bytes(rows: int, cols: int, n_salient: int, block_size: int, group_size: int) -> int:
    n_rg = -(-rows // group_size)
    n_blocks = -(-cols // block_size)
    return (
        packedbin_nbytes(rows * cols)  # first-pass signs
        + packedbin_nbytes(rows * n_salient)  # residual signs
        + 4 * n_salient  # salient column indices
        + packedbin_nbytes(cols)  # column group bitmap
        + 16 * n_rg * n_blocks  # four f32 scales per tile
        + 4 * n_blocks  # split thresholds
    )


def salient_count(rows, cols, block_size, group_size, target_bits=1.08, fraction=None) -> int:
    if fraction is not None:
        return int(min(cols, round(fraction * cols)))
    budget = target_bits * rows * cols
    n = 0
    while n < cols and 8 * payload_bytes(rows, cols, n + 1, block_size, group_size) <= budget:
        n += 1
    return n


def column_sensitivity(W, Hinv_upper) -> np.ndarray:
    inv_diag = np.sum(Hinv_upper ** 2, axis=0)  # diag of H^-1 = U^T U
    return np.sum(np.asarray(W, dtype=np.float64) ** 2, axis=0) / inv_diag


def split_error(absw: np.ndarray, in_b: np.ndarray, row_groups) -> float:
    total = 0.0
    for lo, hi in row_groups:
        tile = absw[lo:hi]
        for mask in (~in_b, in_b):
            if mask.any():
                part = tile[:, mask]
                total += float(np.sum((part - part.mean()) ** 2))
    return total


def choose_split(absw: np.ndarray, row_groups, grid: int):
    """Scan split points on column magnitude; returns (threshold, in_sparse_group)."""
    mags = absw.mean(axis=0)
    if mags.size == 0:
        return 0.0, np.zeros(0, dtype=bool)
    best_t, best_err = float(mags.max()), None
    for t in np.linspace(mags.min(), mags.max(), max(grid, 2)):
        err = split_error(absw, mags > t, row_groups)
        if best_err is None or err < best_err - 1e-12:
            best_t, best_err = float(t), err
    return best_t, mags > best_t


def billm_binarize(
    W,
    H,
    block_size: int = 128,
    group_size: int = 128,
    damp: float = 0.01,
    salient_fraction=None,
    target_bits: float = 1.08,
    split_grid: int = 40,
) -> QuantizedTensor:
    W = np.array(W, dtype=np.float64)
    rows, cols = W.shape
    if as_matrix(H).shape != (cols, cols):
        raise ValueError(f"Hessian width does not match in-dim {cols}")
    if block_size < 1 or group_size < 1:
        raise ValueError("block and group sizes must be positive")
    Hinv = inverse_cholesky(H, damp)

    n_sal = salient_count(rows, cols, block_size, group_size, target_bits, salient_fraction)
    order = np.argsort(-column_sensitivity(W, Hinv), kind="stable")
    salient = np.sort(order[:n_sal])
    is_sal = np.zeros(cols, dtype=bool)
    is_sal[salient] = True
    sal_pos = {int(c): k for k, c in enumerate(salient)}

    row_groups = [(lo, min(lo + group_size, rows)) for lo in range(0, rows, group_size)]
    row_tile = np.arange(rows) // group_size
    n_blocks = -(-cols // block_size)
    scales = np.zeros((len(row_groups), n_blocks, 4), dtype=np.float32)
    thresholds = np.zeros(n_blocks, dtype=np.float32)
    colgroup = np.zeros(cols, dtype=bool)
    signs = np.ones((rows, cols), dtype=bool)
    res_signs = np.ones((rows, n_sal), dtype=bool)

    for b, i1 in enumerate(range(0, cols, block_size)):
        i2 = min(i1 + block_size, cols)
        W1 = W[:, i1:i2].copy()
        Err1 = np.zeros_like(W1)
        Hinv1 = Hinv[i1:i2, i1:i2]
        sal1 = is_sal[i1:i2]
        plain = np.flatnonzero(~sal1)

        absw = np.abs(W1[:, plain])
        t, in_b = choose_split(absw, row_groups, split_grid)
        thresholds[b] = t
        colgroup[i1 + plain[in_b]] = True
        for r, (lo, hi) in enumerate(row_groups):
            sal_tile = W1[lo:hi][:, sal1]
            beta1, beta2, _ = residual_binarize(sal_tile) if sal_tile.size else (0.0, 0.0, None)
            tile = absw[lo:hi]
            beta_a = tile[:, ~in_b].mean() if (~in_b).any() else 0.0
            beta_b = tile[:, in_b].mean() if in_b.any() else 0.0
            scales[r, b] = (beta1, beta2, beta_a, beta_b)

        tile_scales = scales[row_tile, b]  # [rows, 4] f32
        for i in range(i2 - i1):
            col = i1 + i
            w = W1[:, i]
            if is_sal[col]:
                b1, b2 = tile_scales[:, 0], tile_scales[:, 1]
                s1 = (w >= 0) | (b1 == 0)
                v1 = np.where(s1, b1, -b1).astype(np.float32)
                s2 = ((w - v1) >= 0) | (b2 == 0)
                v2 = np.where(s2, b2, -b2).astype(np.float32)
                q = (v1 + v2).astype(np.float64)
                signs[:, col] = s1
                res_signs[:, sal_pos[col]] = s2
            else:
                beta = tile_scales[:, 3] if colgroup[col] else tile_scales[:, 2]
                s = (w >= 0) | (beta == 0)
                q = np.where(s, beta, -beta).astype(np.float32).astype(np.float64)
                signs[:, col] = s
            err = (w - q) / Hinv1[i, i]
            W1[:, i:] -= np.outer(err, Hinv1[i, i:])
            Err1[:, i] = err
        W[:, i2:] -= Err1 @ Hinv[i1:i2, i2:]

    parts = {
        "signs": bit_part(signs),
        "residual_signs": bit_part(res_signs),
        "salient": u32_part(salient),
        "column_groups": bit_part(colgroup),
        "scales": f32_part(scales),
        "thresholds": f32_part(thresholds),
    }
    meta = {"block_size": int(block_size), "group_size": int(group_size), "n_salient": int(n_sal)}
    return QuantizedTensor("bin", (rows, cols), parts, meta)
