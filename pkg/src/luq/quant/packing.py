"""Bit packing for quantized payloads.

packed4: two 4-bit codes per byte, low nibble first, row-major.
packedbin: one bit per element, row-major, LSB first, padded to a whole byte.
"""

import numpy as np


def packed4_nbytes(n: int) -> int:
    return (n + 1) // 2


def packedbin_nbytes(n: int) -> int:
    return (n + 7) // 8


def pack_nibbles(codes: np.ndarray) -> np.ndarray:
    """Pack unsigned codes in [0, 15] into bytes, low nibble first."""
    flat = np.asarray(codes).reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() > 15):
        raise ValueError("nibble codes must lie in [0, 15]")
    flat = flat.astype(np.uint8)
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)


def unpack_nibbles(payload: np.ndarray, n: int) -> np.ndarray:
    payload = np.asarray(payload, dtype=np.uint8).reshape(-1)
    if payload.size != packed4_nbytes(n):
        raise ValueError(f"packed4 payload length {payload.size} does not match {n} codes")
    out = np.empty(payload.size * 2, dtype=np.uint8)
    out[0::2] = payload & 0x0F
    out[1::2] = payload >> 4
    return out[:n]


def pack_bits(bits: np.ndarray) -> np.ndarray:
    flat = np.asarray(bits).reshape(-1).astype(bool)
    return np.packbits(flat, bitorder="little")


def unpack_bits(payload: np.ndarray, n: int) -> np.ndarray:
    payload = np.asarray(payload, dtype=np.uint8).reshape(-1)
    if payload.size != packedbin_nbytes(n):
        raise ValueError(f"packedbin payload length {payload.size} does not match {n} bits")
    return np.unpackbits(payload, count=n, bitorder="little").astype(bool)
