"""Quantized tensor payloads and their exact decoders."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .packing import (
    pack_bits,
    pack_nibbles,
    packed4_nbytes,
    packedbin_nbytes,
    unpack_bits,
    unpack_nibbles,
)

# storage dtype tag -> numpy dtype of the raw buffer
PART_DTYPES = {"f32": np.float32, "u32": np.uint32, "packed4": np.uint8, "packedbin": np.uint8}


def part_nbytes(dtype: str, shape) -> int:
    n = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    if dtype in ("f32", "u32"):
        return 4 * n
    if dtype == "packed4":
        return packed4_nbytes(n)
    if dtype == "packedbin":
        return packedbin_nbytes(n)
    raise ValueError(f"unknown dtype {dtype!r}")


@dataclass(frozen=True)
class Part:
    """One stored array. For packed dtypes ``shape`` is the logical element shape."""

    dtype: str
    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        expected = part_nbytes(self.dtype, self.shape)
        if self.data.nbytes != expected:
            raise ValueError(
                f"{self.dtype} part of shape {list(self.shape)} needs {expected} bytes, got {self.data.nbytes}"
            )

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)


@dataclass(frozen=True)
class QuantizedTensor:
    format: str  # "rtn<b>", "gptq<b>" or "bin"
    shape: tuple
    parts: dict
    meta: dict = field(default_factory=dict)

    @property
    def numel(self) -> int:
        return int(self.shape[0] * self.shape[1])

    @property
    def payload_bytes(self) -> int:
        return sum(p.nbytes for p in self.parts.values())

    @property
    def bits_per_weight(self) -> float:
        """Realized storage cost, counting every stored byte."""
        return 8.0 * self.payload_bytes / max(self.numel, 1)

    @property
    def family(self) -> str:
        return "bin" if self.format == "bin" else self.format.rstrip("0123456789")


def f32_part(a) -> Part:
    a = np.ascontiguousarray(a, dtype=np.float32)
    return Part("f32", tuple(a.shape), a)


def u32_part(a) -> Part:
    a = np.ascontiguousarray(a, dtype=np.uint32)
    return Part("u32", tuple(a.shape), a)


def nibble_part(codes_unsigned: np.ndarray) -> Part:
    return Part("packed4", tuple(codes_unsigned.shape), pack_nibbles(codes_unsigned))


def bit_part(bits: np.ndarray) -> Part:
    bits = np.asarray(bits, dtype=bool)
    return Part("packedbin", tuple(bits.shape), pack_bits(bits))


# ---------------------------------------------------------------- uniform grid


def group_bounds(cols: int, group_size: int):
    return [(g, min(g + group_size, cols)) for g in range(0, cols, group_size)]


def uniform_codes(qt: QuantizedTensor) -> np.ndarray:
    rows, cols = qt.shape
    raw = unpack_nibbles(qt.parts["codes"].data, rows * cols).reshape(rows, cols)
    return raw.astype(np.int32) - 8


def expand_group_scales(scales: np.ndarray, cols: int, group_size: int) -> np.ndarray:
    """Broadcast [rows, n_groups] scales to a [rows, cols] array."""
    reps = [hi - lo for lo, hi in group_bounds(cols, group_size)]
    return np.repeat(scales, reps, axis=1)


def dequantize_uniform(qt: QuantizedTensor) -> np.ndarray:
    rows, cols = qt.shape
    scales = qt.parts["scales"].data.astype(np.float32)
    full = expand_group_scales(scales, cols, qt.meta["group_size"])
    return (full * uniform_codes(qt).astype(np.float32)).astype(np.float32)


def make_uniform_tensor(method: str, codes: np.ndarray, scales: np.ndarray, bits: int, group_size: int) -> QuantizedTensor:
    rows, cols = codes.shape
    parts = {
        "codes": nibble_part((codes + 8).astype(np.uint8)),
        "scales": f32_part(scales),
    }
    meta = {"bits": int(bits), "group_size": int(group_size)}
    return QuantizedTensor(f"{method}{bits}", (rows, cols), parts, meta)


# ---------------------------------------------------------------- binarized


def bin_layout(qt: QuantizedTensor):
    rows, cols = qt.shape
    sal = qt.parts["salient"].data.astype(np.int64)
    signs = np.where(unpack_bits(qt.parts["signs"].data, rows * cols).reshape(rows, cols), 1.0, -1.0)
    res = unpack_bits(qt.parts["residual_signs"].data, rows * sal.size).reshape(rows, sal.size)
    res = np.where(res, 1.0, -1.0)
    colgroup = unpack_bits(qt.parts["column_groups"].data, cols)
    return sal, signs.astype(np.float32), res.astype(np.float32), colgroup


def bin_scale_maps(qt: QuantizedTensor):
    """Per-element scale arrays for the four binarization roles."""
    rows, cols = qt.shape
    scales = qt.parts["scales"].data.astype(np.float32)  # [row_groups, blocks, 4]
    rg = qt.meta["group_size"]
    bs = qt.meta["block_size"]
    row_idx = np.arange(rows) // rg
    col_idx = np.arange(cols) // bs
    per = scales[row_idx][:, col_idx]  # [rows, cols, 4]
    return per[..., 0], per[..., 1], per[..., 2], per[..., 3]


def dequantize_bin(qt: QuantizedTensor) -> np.ndarray:
    sal, signs, res, colgroup = bin_layout(qt)
    b1, b2, ba, bb = bin_scale_maps(qt)
    mag = np.where(colgroup[None, :], bb, ba)
    out = (mag * signs).astype(np.float32)
    if sal.size:
        out[:, sal] = b1[:, sal] * signs[:, sal] + b2[:, sal] * res
    return out.astype(np.float32)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Reconstruct the f32 weight a quantized payload stands for."""
    for name, part in qt.parts.items():
        if part.data.nbytes != part_nbytes(part.dtype, part.shape):
            raise ValueError(f"payload length mismatch in part {name!r}")
    if qt.format == "bin":
        return dequantize_bin(qt)
    return dequantize_uniform(qt)


def repack(w_hat: np.ndarray, like: QuantizedTensor) -> QuantizedTensor:
    """Re-encode a reconstruction using the scales and layout of ``like``.

    Inverse of :func:`dequantize` on the code level: ``repack(dequantize(q), q)``
    reproduces the payload of ``q`` byte for byte.
    """
    w_hat = np.asarray(w_hat, dtype=np.float32)
    if tuple(w_hat.shape) != tuple(like.shape):
        raise ValueError("shape mismatch")
    if like.format != "bin":
        rows, cols = like.shape
        scales = like.parts["scales"].data
        full = expand_group_scales(scales, cols, like.meta["group_size"])
        with np.errstate(divide="ignore", invalid="ignore"):
            codes = np.where(full > 0, np.rint(w_hat / np.where(full > 0, full, 1)), 0).astype(np.int32)
        bits = like.meta["bits"]
        qmax = 2 ** (bits - 1) - 1
        codes = np.clip(codes, -qmax, qmax)
        return make_uniform_tensor(like.family, codes, scales, bits, like.meta["group_size"])

    sal, _, _, colgroup = bin_layout(like)
    b1, b2, ba, bb = bin_scale_maps(like)
    signs = w_hat >= 0
    res = np.zeros((w_hat.shape[0], sal.size), dtype=bool)
    if sal.size:
        target = w_hat[:, sal]
        best = None
        for s1 in (1.0, -1.0):
            for s2 in (1.0, -1.0):
                err = np.abs(b1[:, sal] * s1 + b2[:, sal] * s2 - target)
                if best is None:
                    best, c1, c2 = err, np.full(err.shape, s1), np.full(err.shape, s2)
                else:
                    take = err < best
                    best = np.where(take, err, best)
                    c1 = np.where(take, s1, c1)
                    c2 = np.where(take, s2, c2)
        signs[:, sal] = c1 > 0
        res = c2 > 0
    parts = dict(like.parts)
    parts["signs"] = bit_part(signs)
    parts["residual_signs"] = bit_part(res)
    return QuantizedTensor("bin", like.shape, parts, dict(like.meta))
