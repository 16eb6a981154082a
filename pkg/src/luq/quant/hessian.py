import numpy as np


class HessianAccumulator:
    """Running ``sum x x^T`` over the inputs seen by one linear layer (f64)."""

    def __init__(self, width: int):
        self.width = int(width)
        self.H = np.zeros((self.width, self.width), dtype=np.float64)
        self.count = 0

    def add(self, x) -> "HessianAccumulator":
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(-1, x.shape[-1])
        if x.shape[-1] != self.width:
            raise ValueError(f"input width {x.shape[-1]} does not match accumulator width {self.width}")
        self.H += x.T @ x
        self.count += x.shape[0]
        return self

    @property
    def matrix(self) -> np.ndarray:
        return 0.5 * (self.H + self.H.T)


def accumulate_hessian(inputs, width: int | None = None) -> HessianAccumulator:
    """Build an accumulator from an iterable of input batches (or one array)."""
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    acc = None
    for batch in inputs:
        batch = np.asarray(batch)
        if acc is None:
            acc = HessianAccumulator(width if width is not None else batch.shape[-1])
        acc.add(batch)
    if acc is None:
        if width is None:
            raise ValueError("empty input stream needs an explicit width")
        acc = HessianAccumulator(width)
    return acc


def as_matrix(H) -> np.ndarray:
    if isinstance(H, HessianAccumulator):
        return H.matrix
    return np.asarray(H, dtype=np.float64)


def proxy_loss(W, W_hat, H) -> float:
    """Layer reconstruction proxy ``tr(dW H dW^T)``."""
    dW = np.asarray(W, dtype=np.float64) - np.asarray(W_hat, dtype=np.float64)
    return float(np.einsum("ij,jk,ik->", dW, as_matrix(H), dW))
