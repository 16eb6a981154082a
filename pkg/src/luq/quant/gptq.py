"""Hessian-compensated uniform quantization (GPTQ-style).

Columns are visited left to right in lazy blocks; the rounding error of each
column, scaled by the Cholesky factor of the inverse Hessian, is pushed onto
the columns that have not been quantized yet.
"""

import numpy as np
import scipy.linalg

from .hessian import as_matrix
from .rtn import quantize_column, symmetric_scale
from .tensor import make_uniform_tensor


class SingularHessianError(np.linalg.LinAlgError):
    pass


def check_blocking(block_size: int, group_size: int):
    if block_size % group_size and group_size % block_size:
        raise ValueError("block_size and group_size must divide one another")


def damped_hessian(H, damp: float) -> np.ndarray:
    H = as_matrix(H).copy()
    diag = np.diag(H)
    # inputs that never fire carry no information; keep the weight, fix the pivot
    dead = diag == 0
    H[dead, dead] = 1.0
    H[np.diag_indices_from(H)] += damp * float(np.mean(np.diag(H)))
    return H


def inverse_cholesky(H, damp: float) -> np.ndarray:
    """Upper Cholesky factor of the inverse of the damped Hessian."""
    Hd = damped_hessian(H, damp)
    try:
        L = np.linalg.cholesky(Hd)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError("damped Hessian is not positive definite") from exc
    eye = np.eye(Hd.shape[0])
    Linv = scipy.linalg.solve_triangular(L, eye, lower=True)
    Hinv = Linv.T @ Linv
    try:
        return np.linalg.cholesky(Hinv).T
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError("inverse Hessian is not positive definite") from exc


def gptq_quantize(W, H, bits: int = 4, block_size: int = 128, group_size: int = 128, damp: float = 0.01):
    W = np.array(W, dtype=np.float64)
    rows, cols = W.shape
    if as_matrix(H).shape != (cols, cols):
        raise ValueError(f"Hessian width does not match in-dim {cols}")
    check_blocking(block_size, group_size)
    Hinv = inverse_cholesky(H, damp)

    n_groups = -(-cols // group_size)
    codes = np.zeros((rows, cols), dtype=np.int32)
    scales = np.zeros((rows, n_groups), dtype=np.float32)
    scale = None

    for i1 in range(0, cols, block_size):
        i2 = min(i1 + block_size, cols)
        W1 = W[:, i1:i2].copy()
        Err1 = np.zeros_like(W1)
        Hinv1 = Hinv[i1:i2, i1:i2]
        for i in range(i2 - i1):
            col = i1 + i
            if col % group_size == 0:
                g_hi = min(col + group_size, cols)
                # group starts at a block start or lies inside this block
                src = W[:, col:g_hi] if i == 0 else W1[:, i:i + (g_hi - col)]
                scale = symmetric_scale(src, bits)
                scales[:, col // group_size] = scale
            w = W1[:, i]
            q = quantize_column(w, scale, bits)
            codes[:, col] = q
            q_val = (scale * q.astype(np.float32)).astype(np.float64)
            d = Hinv1[i, i]
            err = (w - q_val) / d
            W1[:, i:] -= np.outer(err, Hinv1[i, i:])
            Err1[:, i] = err
        W[:, i2:] -= Err1 @ Hinv[i1:i2, i2:]
    return make_uniform_tensor("gptq", codes, scales, bits, group_size)
