"""Adapter-only checkpoint container.

Layout: magic "NPHD1", u32-LE header length, JSON header (model config,
LoRA config, tokenizer hash, base-weights hash, epoch), u32-LE array count,
then named arrays as little-endian IEEE-754 32-bit values with shape
prefixes. The base itself is not stored; a checkpoint loads onto a
compatible base identified by its shape-signature hash.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError
from .lora import LoraConfig
from .model import ModelConfig, Seq2SeqModel, attach_lora, init_model, quantize_model

MAGIC = b"NPHD1"


def save_checkpoint(
    path: str | Path,
    model: Seq2SeqModel,
    tokenizer_hash: str,
    epoch: int,
) -> None:
    header = {
        "model_config": model.config.as_dict(),
        "lora_config": model.lora_config.as_dict() if model.lora_config else None,
        "tokenizer_hash": tokenizer_hash,
        "base_hash": model.base_hash(),
        "base_shape_signature": model.shape_signature(),
        "base_init_seed": model.seed,
        "quant": (
            {"scheme": model.quant_scheme, "block_size": model.quant_block_size}
            if model.quant_scheme
            else None
        ),
        "lora_seed": model.lora_seed,
        "epoch": epoch,
    }
    arrays = {name: p.data for name, p in model.trainable_parameters().items()}

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic {blob[:5]!r})")
    offset = len(MAGIC)

    def take(fmt: str) -> int:
        nonlocal offset
        size = struct.calcsize(fmt)
        (value,) = struct.unpack_from(fmt, blob, offset)
        offset += size
        return value

    header_len = take("<I")
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    n_arrays = take("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name_len = take("<H")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        arrays[name] = data.copy()
    return header, arrays


def load_checkpoint(path: str | Path, expect_tokenizer_hash: str | None = None) -> Seq2SeqModel:
    """Rebuild the base from its recorded seed and load the adapters onto it."""
    header, arrays = read_checkpoint(path)
    config = ModelConfig.from_dict(header["model_config"])
    model = init_model(config, seed=header["base_init_seed"])
    if header.get("quant"):
        quantize_model(model, header["quant"]["scheme"], header["quant"]["block_size"])
    if header.get("lora_config"):
        attach_lora(model, LoraConfig.from_dict(header["lora_config"]), seed=header.get("lora_seed", 0))

    if model.shape_signature() != header["base_shape_signature"]:
        raise IntegrityError(f"{path}: checkpoint is incompatible with the rebuilt base (shape signature)")
    if model.base_hash() != header["base_hash"]:
        raise IntegrityError(f"{path}: rebuilt base weights do not match the recorded hash")
    if expect_tokenizer_hash and header["tokenizer_hash"] != expect_tokenizer_hash:
        raise IntegrityError(f"{path}: checkpoint was trained with a different tokenizer")

    trainable = model.trainable_parameters()
    missing = set(trainable) - set(arrays)
    extra = set(arrays) - set(trainable)
    if missing or extra:
        raise IntegrityError(
            f"{path}: adapter arrays do not match (missing {sorted(missing)[:4]}, extra {sorted(extra)[:4]})"
        )
    for name, value in arrays.items():
        param = trainable[name]
        if param.data.shape != value.shape:
            raise IntegrityError(f"{path}: array {name} has shape {value.shape}, expected {param.data.shape}")
        param.data = value.astype(param.data.dtype)
    return model
