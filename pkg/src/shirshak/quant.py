"""Blockwise quantization of frozen weight matrices.

Three schemes:
  - "int8": per-row absmax, signed codes -127..127
  - "int4": blockwise absmax, signed linear codes -7..7, two codes per byte
  - "nf4":  blockwise absmax with a 16-level normal-quantile codebook

Rounding is half-away-from-zero throughout. Quantized matrices are
immutable; the only way back to floats is dequantize.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ContractError, IntegrityError
from .numerics import Tensor, constant, matmul

SCHEMES = ("int8", "int4", "nf4")
DEFAULT_BLOCK_SIZE = 64

_INT8_TOP = 127
_INT4_TOP = 7


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def pack_4bit(codes: np.ndarray) -> np.ndarray:
    """Pack signed 4-bit codes (-8..7) as two's-complement nibbles, low first.

    Odd-length inputs get a zero filler nibble; callers keep the true length.
    """
    codes = np.asarray(codes, dtype=np.int64).reshape(-1)
    if codes.size and (codes.min() < -8 or codes.max() > 7):
        raise ContractError(f"4-bit codes must lie in [-8, 7], got [{codes.min()}, {codes.max()}]")
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, dtype=np.int64)])
    nibbles = (codes & 0xF).astype(np.uint8)
    return (nibbles[0::2] | (nibbles[1::2] << 4)).astype(np.uint8)


def unpack_4bit(packed: np.ndarray, count: int) -> np.ndarray:
    """Inverse of pack_4bit: recover `count` signed codes."""
    packed = np.asarray(packed, dtype=np.uint8).reshape(-1)
    low = (packed & 0xF).astype(np.int16)
    high = ((packed >> 4) & 0xF).astype(np.int16)
    nibbles = np.empty(packed.size * 2, dtype=np.int16)
    nibbles[0::2] = low
    nibbles[1::2] = high
    if count > nibbles.size:
        raise IntegrityError(f"packed data holds {nibbles.size} codes, {count} requested")
    signed = np.where(nibbles >= 8, nibbles - 16, nibbles)
    return signed[:count].astype(np.int8)


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _norm_ppf(p: float) -> float:
    """Inverse standard-normal CDF by bisection on erf (deterministic)."""
    if not 0.0 < p < 1.0:
        raise ContractError(f"quantile probability must be in (0, 1), got {p}")
    lo, hi = -12.0, 12.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _norm_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=None)
def normal_float_codebook(bits: int = 4) -> np.ndarray:
    """16 levels at standard-normal quantiles, zero exactly representable.

    Construction: 2^(bits-1) equal-mass quantiles on the negative side and
    2^(bits-1)+1 on the positive side, deduplicating the shared zero, then
    normalizing into [-1, 1]. The probability offset keeps the outermost
    quantiles finite: half of one bin's mass on each side.
    """
    half = 2 ** (bits - 1)
    n_levels = 2 ** bits
    offset = 0.5 * (1.0 / (2 * n_levels) + 1.0 / (2 * (n_levels - 1)))
    neg_ps = np.linspace(offset, 0.5, half)
    pos_ps = np.linspace(0.5, 1.0 - offset, half + 1)
    levels = [_norm_ppf(p) for p in neg_ps] + [_norm_ppf(p) for p in pos_ps[1:]]
    levels = np.array(levels, dtype=np.float64)
    levels[half - 1] = 0.0  # exact zero at the shared quantile
    levels /= np.abs(levels).max()
    out = levels.astype(np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class QuantizedMatrix:
    """Frozen base weight stored as integer codes plus per-row/per-block scales."""

    scheme: str
    codes: np.ndarray  # int8 [rows, cols] for int8; packed uint8 [rows, ceil(padded/2)] for 4-bit
    scales: np.ndarray  # float32 [rows] (int8) or [rows, n_blocks] (4-bit)
    shape: tuple[int, int]
    block_size: int | None = None
    codebook: np.ndarray | None = None

    def __post_init__(self):
        self.codes.flags.writeable = False
        self.scales.flags.writeable = False


def _blocked(w: np.ndarray, block_size: int) -> tuple[np.ndarray, int]:
    """Zero-pad rows to a multiple of block_size and reshape to [rows, blocks, block]."""
    rows, cols = w.shape
    n_blocks = max(1, -(-cols // block_size))
    padded = n_blocks * block_size
    if padded != cols:
        w = np.concatenate([w, np.zeros((rows, padded - cols), dtype=w.dtype)], axis=1)
    return w.reshape(rows, n_blocks, block_size), n_blocks


def quantize(
    w: np.ndarray, scheme: str = "int8", block_size: int = DEFAULT_BLOCK_SIZE
) -> QuantizedMatrix:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ContractError(f"quantize expects a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ContractError("quantize requires finite entries")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")

    if scheme == "int8":
        absmax = np.abs(w).max(axis=1)
        scales = absmax / _INT8_TOP
        safe = np.where(scales == 0.0, 1.0, scales)
        codes = round_half_away(w / safe[:, None]).clip(-_INT8_TOP, _INT8_TOP).astype(np.int8)
        return QuantizedMatrix(
            scheme="int8",
            codes=codes,
            scales=scales.astype(np.float32),
            shape=w.shape,
        )

    if block_size < 1:
        raise ConfigurationError(f"block_size must be >= 1, got {block_size}")
    blocked, n_blocks = _blocked(w, block_size)
    absmax = np.abs(blocked).max(axis=2)

    if scheme == "int4":
        scales = absmax / _INT4_TOP
        safe = np.where(scales == 0.0, 1.0, scales)
        codes = round_half_away(blocked / safe[:, :, None]).clip(-_INT4_TOP, _INT4_TOP)
        packed = pack_4bit(codes.astype(np.int64))
        return QuantizedMatrix(
            scheme="int4",
            codes=packed,
            scales=scales.astype(np.float32),
            shape=w.shape,
            block_size=block_size,
        )

    # nf4: normalize each block into [-1, 1] and snap to the nearest codebook level
    codebook = normal_float_codebook()
    scales = absmax
    safe = np.where(scales == 0.0, 1.0, scales)
    normalized = blocked / safe[:, :, None]
    idx = np.abs(normalized[..., None] - codebook.astype(np.float64)).argmin(axis=-1)
    packed = pack_4bit(idx.astype(np.int64) - 8)
    return QuantizedMatrix(
        scheme="nf4",
        codes=packed,
        scales=scales.astype(np.float32),
        shape=w.shape,
        block_size=block_size,
        codebook=codebook,
    )


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    rows, cols = q.shape
    if q.scheme == "int8":
        codes = np.asarray(q.codes, dtype=np.int16)
        if codes.min(initial=0) < -_INT8_TOP or codes.max(initial=0) > _INT8_TOP:
            raise IntegrityError(f"int8 codes outside [-127, 127]: [{codes.min()}, {codes.max()}]")
        return (codes.astype(np.float32) * q.scales[:, None]).astype(np.float32)

    if q.block_size is None:
        raise IntegrityError("4-bit matrix is missing its block size")
    n_blocks = q.scales.shape[1]
    padded = n_blocks * q.block_size
    codes = unpack_4bit(q.codes, rows * padded).reshape(rows, n_blocks, q.block_size)

    if q.scheme == "int4":
        if codes.min(initial=0) < -_INT4_TOP or codes.max(initial=0) > _INT4_TOP:
            raise IntegrityError(f"int4 codes outside [-7, 7]: [{codes.min()}, {codes.max()}]")
        values = codes.astype(np.float32) * q.scales[:, :, None]
    elif q.scheme == "nf4":
        codebook = q.codebook if q.codebook is not None else normal_float_codebook()
        values = codebook[codes.astype(np.int16) + 8] * q.scales[:, :, None]
    else:
        raise IntegrityError(f"unknown scheme {q.scheme!r}")
    return values.reshape(rows, padded)[:, :cols].astype(np.float32)


def qmatmul(q: QuantizedMatrix, x: Tensor | np.ndarray) -> Tensor:
    """Reference semantics: matmul(dequantize(q), x)."""
    x = x if isinstance(x, Tensor) else constant(x)
    if x.data.ndim < 2 or q.shape[1] != x.shape[-2]:
        raise ContractError(f"qmatmul shape mismatch: {q.shape} @ {x.shape}")
    dense = constant(dequantize(q).astype(x.data.dtype, copy=False))
    return matmul(dense, x)


# --- serialization (container format) ------------------------------------------

_SCHEME_TAGS = {"int8": 1, "int4": 2, "nf4": 3}
_TAG_SCHEMES = {tag: scheme for scheme, tag in _SCHEME_TAGS.items()}


def serialize_quantized(q: QuantizedMatrix) -> bytes:
    """Scheme tag, shape, block size, scale array, packed code bytes; little-endian."""
    import struct

    header = struct.pack(
        "<BIIi", _SCHEME_TAGS[q.scheme], q.shape[0], q.shape[1], q.block_size or 0
    )
    scales = np.ascontiguousarray(q.scales, dtype="<f4")
    codes = np.ascontiguousarray(q.codes)
    return (
        header
        + struct.pack("<I", scales.size)
        + scales.tobytes()
        + struct.pack("<I", codes.size)
        + codes.tobytes()
    )


def deserialize_quantized(blob: bytes) -> QuantizedMatrix:
    import struct

    tag, rows, cols, block_size = struct.unpack_from("<BIIi", blob, 0)
    offset = struct.calcsize("<BIIi")
    scheme = _TAG_SCHEMES.get(tag)
    if scheme is None:
        raise IntegrityError(f"unknown quantization scheme tag {tag}")
    (n_scales,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    scales = np.frombuffer(blob, dtype="<f4", count=n_scales, offset=offset).copy()
    offset += n_scales * 4
    (n_codes,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if scheme == "int8":
        codes = np.frombuffer(blob, dtype=np.int8, count=n_codes, offset=offset).copy()
        codes = codes.reshape(rows, cols)
        scales = scales.reshape(rows)
    else:
        codes = np.frombuffer(blob, dtype=np.uint8, count=n_codes, offset=offset).copy()
        scales = scales.reshape(rows, -1)
    return QuantizedMatrix(
        scheme=scheme,
        codes=codes,
        scales=scales,
        shape=(rows, cols),
        block_size=block_size or None,
        codebook=normal_float_codebook() if scheme == "nf4" else None,
    )
