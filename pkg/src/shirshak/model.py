"""Toy encoder-decoder transformer for headline generation.

Pre-layer-norm blocks, learned position embeddings, multi-head self and
cross attention, tied output head. Base parameters are frozen; training
happens through LoRA adapters attached to selected projections.

Masking uses an additive -1e9, which underflows to an exact zero weight
after softmax, so causality and pad exclusion are bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigurationError, ContractError
from .lora import LoraAdapter, LoraConfig, lora_forward
from .numerics import Tensor
from .quant import (
    DEFAULT_BLOCK_SIZE,
    QuantizedMatrix,
    dequantize,
    quantize,
    serialize_quantized,
)

NEG_MASK = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ffn: int = 256
    max_positions: int = 1024
    dropout: float = 0.1
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigurationError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.max_positions < 1024:
            raise ConfigurationError(
                f"max_positions must be >= 1024 to honor the input cap, got {self.max_positions}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")

    def as_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "d_ffn": self.d_ffn,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
            "tie_embeddings": self.tie_embeddings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def parameter_count(config: ModelConfig) -> int:
    """Closed-form base parameter count (cross-checked by enumeration in tests)."""
    d, f = config.d_model, config.d_ffn
    enc_layer = 4 * d * d + 2 * d * f + 2 * 2 * d
    dec_layer = 8 * d * d + 2 * d * f + 3 * 2 * d
    total = config.vocab_size * d + config.max_positions * d
    total += config.n_encoder_layers * enc_layer + config.n_decoder_layers * dec_layer
    total += 2 * 2 * d  # encoder and decoder final norms
    if not config.tie_embeddings:
        total += config.vocab_size * d
    return total


class Seq2SeqModel:
    """Parameter store plus attached adapters; forward lives in module functions."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype).type
        self._base: dict[str, Tensor | QuantizedMatrix] = {}
        self.adapters: dict[str, LoraAdapter] = {}
        self.extra_biases: dict[str, Tensor] = {}
        self.quant_scheme: str | None = None
        self.quant_block_size: int | None = None
        self.lora_config: LoraConfig | None = None
        self.lora_seed: int = 0
        self._dropout_sites: dict[str, int] = {}
        self._init_parameters(np.random.Generator(np.random.Philox(seed)))

    # -- construction ----------------------------------------------------------

    def _weight(self, rng, name: str, shape: tuple[int, ...]) -> None:
        # Frozen weights must carry usable signal scale on their own: token
        # embeddings at 2*d^-1/2 and Xavier projections. With the tied head the
        # token-embedding norm bounds the reachable logit margin, and the final
        # layer norm (frozen gain 1) bounds the hidden-state norm.
        if name == "embed.tokens":
            std = 2.0 / math.sqrt(shape[-1])
        elif name == "embed.positions":
            std = 1.0 / math.sqrt(shape[-1])
        else:
            std = math.sqrt(2.0 / (shape[0] + shape[1]))
        data = rng.normal(0.0, std, size=shape).astype(self.dtype)
        self._base[name] = nm.constant(data, name=name)

    def _norm(self, rng, name: str, width: int) -> None:
        self._base[f"{name}.gain"] = nm.constant(np.ones(width, dtype=self.dtype), name=f"{name}.gain")
        self._base[f"{name}.shift"] = nm.constant(np.zeros(width, dtype=self.dtype), name=f"{name}.shift")

    def _init_parameters(self, rng) -> None:
        cfg = self.config
        d, f = cfg.d_model, cfg.d_ffn
        self._weight(rng, "embed.tokens", (cfg.vocab_size, d))
        self._weight(rng, "embed.positions", (cfg.max_positions, d))
        for i in range(cfg.n_encoder_layers):
            for suffix in ("q", "k", "v", "o"):
                self._weight(rng, f"enc.{i}.self_attn.{suffix}", (d, d))
            self._weight(rng, f"enc.{i}.ffn_in", (f, d))
            self._weight(rng, f"enc.{i}.ffn_out", (d, f))
            self._norm(rng, f"enc.{i}.norm1", d)
            self._norm(rng, f"enc.{i}.norm2", d)
        for i in range(cfg.n_decoder_layers):
            for attn in ("self_attn", "cross_attn"):
                for suffix in ("q", "k", "v", "o"):
                    self._weight(rng, f"dec.{i}.{attn}.{suffix}", (d, d))
            self._weight(rng, f"dec.{i}.ffn_in", (f, d))
            self._weight(rng, f"dec.{i}.ffn_out", (d, f))
            self._norm(rng, f"dec.{i}.norm1", d)
            self._norm(rng, f"dec.{i}.norm2", d)
            self._norm(rng, f"dec.{i}.norm3", d)
        self._norm(rng, "enc.final_norm", d)
        self._norm(rng, "dec.final_norm", d)
        if not cfg.tie_embeddings:
            self._weight(rng, "head", (cfg.vocab_size, d))

        sites = []
        for i in range(cfg.n_encoder_layers):
            sites += [f"enc.{i}.attn_out", f"enc.{i}.ffn_drop"]
        for i in range(cfg.n_decoder_layers):
            sites += [f"dec.{i}.self_out", f"dec.{i}.cross_out", f"dec.{i}.ffn_drop"]
        self._dropout_sites = {name: idx for idx, name in enumerate(sites)}

    # -- introspection ----------------------------------------------------------

    def projection_keys(self) -> list[str]:
        keys = []
        for i in range(self.config.n_encoder_layers):
            keys += [f"enc.{i}.self_attn.{s}" for s in ("q", "k", "v", "o")]
            keys += [f"enc.{i}.ffn_in", f"enc.{i}.ffn_out"]
        for i in range(self.config.n_decoder_layers):
            keys += [f"dec.{i}.self_attn.{s}" for s in ("q", "k", "v", "o")]
            keys += [f"dec.{i}.cross_attn.{s}" for s in ("q", "k", "v", "o")]
            keys += [f"dec.{i}.ffn_in", f"dec.{i}.ffn_out"]
        return keys

    @staticmethod
    def projection_kind(key: str) -> str:
        return key.rsplit(".", 1)[-1] if "." in key else key

    def base_parameters(self) -> dict[str, Tensor | QuantizedMatrix]:
        return dict(self._base)

    def trainable_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for adapter in self.adapters.values():
            params.update(adapter.trainable_parameters())
        for key, bias in self.extra_biases.items():
            params[f"{key}.extra_bias"] = bias
        return params

    def base_parameter_count(self) -> int:
        total = 0
        for value in self._base.values():
            if isinstance(value, QuantizedMatrix):
                total += value.shape[0] * value.shape[1]
            else:
                total += value.data.size
        return total

    def base_state_bytes(self) -> bytes:
        """Deterministic serialization of every frozen value, for hashing."""
        chunks = []
        for name in sorted(self._base):
            value = self._base[name]
            chunks.append(name.encode("utf-8"))
            if isinstance(value, QuantizedMatrix):
                chunks.append(serialize_quantized(value))
            else:
                chunks.append(np.asarray(value.data.shape, dtype="<i8").tobytes())
                chunks.append(np.ascontiguousarray(value.data.astype("<f8")).tobytes())
        return b"\x00".join(chunks)

    def base_hash(self) -> str:
        return hashlib.sha256(self.base_state_bytes()).hexdigest()

    def shape_signature(self) -> str:
        entries = [
            (name, list(v.shape if isinstance(v, QuantizedMatrix) else v.data.shape))
            for name, v in sorted(self._base.items())
        ]
        return hashlib.sha256(json.dumps(entries).encode()).hexdigest()

    def _site(self, name: str) -> int:
        return self._dropout_sites[name]


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Seq2SeqModel:
    return Seq2SeqModel(config, seed=seed, dtype=dtype)


def quantize_model(
    model: Seq2SeqModel, scheme: str, block_size: int = DEFAULT_BLOCK_SIZE
) -> Seq2SeqModel:
    """Replace every projection weight with its quantized form (in place).

    Embeddings, norms, and the output head stay full precision. Must run
    before adapters are attached.
    """
    if model.adapters:
        raise ContractError("quantize the base before attaching adapters")
    for key in model.projection_keys():
        weight = model._base[key]
        if isinstance(weight, QuantizedMatrix):
            raise ContractError(f"{key} is already quantized")
        model._base[key] = quantize(weight.data, scheme=scheme, block_size=block_size)
    model.quant_scheme = scheme
    model.quant_block_size = block_size
    return model


def attach_lora(model: Seq2SeqModel, config: LoraConfig, seed: int = 0) -> Seq2SeqModel:
    """Wrap targeted projections in LoRA adapters (in place)."""
    if model.adapters:
        raise ContractError("adapters are already attached")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    adapted = 0
    for key in model.projection_keys():
        kind = Seq2SeqModel.projection_kind(key)
        if kind in config.target_projections:
            model.adapters[key] = LoraAdapter(
                base=model._base[key],
                config=config,
                rng=rng,
                name=key,
                layer_id=1000 + adapted,
            )
            adapted += 1
        elif config.bias_mode == "all":
            d_out = model._base[key].shape[0]
            model.extra_biases[key] = nm.parameter(
                np.zeros(d_out, dtype=model.dtype), name=f"{key}.extra_bias"
            )
    model.lora_config = config
    model.lora_seed = seed
    return model


# --- forward ------------------------------------------------------------------


def _project(
    model: Seq2SeqModel, key: str, x: Tensor, training: bool, seed: int, step: int
) -> Tensor:
    slot = model.adapters.get(key)
    if slot is not None:
        return lora_forward(slot, x, training=training, seed=seed, step=step)
    weight = model._base[key]
    if isinstance(weight, QuantizedMatrix):
        w = nm.constant(dequantize(weight).astype(x.data.dtype, copy=False))
    else:
        w = weight
    y = nm.matmul(x, nm.transpose(w))
    bias = model.extra_biases.get(key)
    if bias is not None:
        y = nm.add(y, bias)
    return y


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    return nm.transpose(nm.reshape(x, (b, s, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, hd = x.shape
    return nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (b, s, h * hd))


def _attention(
    model: Seq2SeqModel,
    prefix: str,
    x_q: Tensor,
    x_kv: Tensor,
    additive_mask: np.ndarray | None,
    training: bool,
    seed: int,
    step: int,
    capture: dict | None,
) -> Tensor:
    cfg = model.config
    q = _split_heads(_project(model, f"{prefix}.q", x_q, training, seed, step), cfg.n_heads)
    k = _split_heads(_project(model, f"{prefix}.k", x_kv, training, seed, step), cfg.n_heads)
    v = _split_heads(_project(model, f"{prefix}.v", x_kv, training, seed, step), cfg.n_heads)
    scores = nm.scale(
        nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    )
    if additive_mask is not None:
        scores = nm.add(scores, nm.constant(additive_mask.astype(scores.data.dtype)))
    attn = nm.softmax(scores, axis=-1)
    if capture is not None:
        capture.setdefault(prefix, []).append(np.array(attn.data))
    ctx = _merge_heads(nm.matmul(attn, v))
    return _project(model, f"{prefix}.o", ctx, training, seed, step)


def _layer_norm(model: Seq2SeqModel, name: str, x: Tensor) -> Tensor:
    return nm.layer_norm(x, model._base[f"{name}.gain"], model._base[f"{name}.shift"])


def _dropout(model: Seq2SeqModel, site: str, x: Tensor, training: bool, seed: int, step: int) -> Tensor:
    return nm.dropout(x, model.config.dropout, (seed, model._site(site), step), training)


def _positions(model: Seq2SeqModel, length: int) -> Tensor:
    if length > model.config.max_positions:
        raise ContractError(
            f"sequence length {length} exceeds max_positions {model.config.max_positions}"
        )
    return nm.embed(model._base["embed.positions"], np.arange(length))


def _check_ids(model: Seq2SeqModel, ids: np.ndarray, what: str) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ContractError(f"{what} must be [batch, length], got shape {ids.shape}")
    return ids


def encode_source(
    model: Seq2SeqModel,
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    capture: dict | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Run the encoder; returns hidden states and the additive source mask."""
    input_ids = _check_ids(model, input_ids, "input_ids")
    batch, src_len = input_ids.shape
    mask = np.asarray(attention_mask)
    if mask.shape != input_ids.shape:
        raise ContractError(f"attention_mask shape {mask.shape} != input_ids shape {input_ids.shape}")
    src_mask = ((1 - mask)[:, None, None, :] * NEG_MASK).astype(np.float64)

    h = nm.add(
        nm.embed(model._base["embed.tokens"], input_ids),
        _positions(model, src_len),
    )
    for i in range(model.config.n_encoder_layers):
        normed = _layer_norm(model, f"enc.{i}.norm1", h)
        attn = _attention(
            model, f"enc.{i}.self_attn", normed, normed, src_mask, training, seed, step, capture
        )
        h = nm.add(h, _dropout(model, f"enc.{i}.attn_out", attn, training, seed, step))
        normed = _layer_norm(model, f"enc.{i}.norm2", h)
        ffn = _project(model, f"enc.{i}.ffn_out", nm.relu(
            _project(model, f"enc.{i}.ffn_in", normed, training, seed, step)
        ), training, seed, step)
        h = nm.add(h, _dropout(model, f"enc.{i}.ffn_drop", ffn, training, seed, step))
    return _layer_norm(model, "enc.final_norm", h), src_mask


def decode_step(
    model: Seq2SeqModel,
    enc_out: Tensor,
    src_mask: np.ndarray,
    decoder_input_ids: np.ndarray,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    capture: dict | None = None,
) -> Tensor:
    """Run the decoder over a full (teacher-forced or generated) prefix."""
    decoder_input_ids = _check_ids(model, decoder_input_ids, "decoder_input_ids")
    batch, tgt_len = decoder_input_ids.shape
    causal = np.triu(np.full((tgt_len, tgt_len), NEG_MASK), k=1)[None, None, :, :]

    h = nm.add(
        nm.embed(model._base["embed.tokens"], decoder_input_ids),
        _positions(model, tgt_len),
    )
    for i in range(model.config.n_decoder_layers):
        normed = _layer_norm(model, f"dec.{i}.norm1", h)
        attn = _attention(
            model, f"dec.{i}.self_attn", normed, normed, causal, training, seed, step, capture
        )
        h = nm.add(h, _dropout(model, f"dec.{i}.self_out", attn, training, seed, step))
        normed = _layer_norm(model, f"dec.{i}.norm2", h)
        cross = _attention(
            model, f"dec.{i}.cross_attn", normed, enc_out, src_mask, training, seed, step, capture
        )
        h = nm.add(h, _dropout(model, f"dec.{i}.cross_out", cross, training, seed, step))
        normed = _layer_norm(model, f"dec.{i}.norm3", h)
        ffn = _project(model, f"dec.{i}.ffn_out", nm.relu(
            _project(model, f"dec.{i}.ffn_in", normed, training, seed, step)
        ), training, seed, step)
        h = nm.add(h, _dropout(model, f"dec.{i}.ffn_drop", ffn, training, seed, step))
    h = _layer_norm(model, "dec.final_norm", h)

    head = model._base["embed.tokens"] if model.config.tie_embeddings else model._base["head"]
    return nm.matmul(h, nm.transpose(head))


def forward(
    model: Seq2SeqModel,
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    decoder_input_ids: np.ndarray,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    capture: dict | None = None,
) -> Tensor:
    """Teacher-forced forward pass -> logits [batch, tgt_len, vocab]."""
    enc_out, src_mask = encode_source(
        model, input_ids, attention_mask, training, seed, step, capture
    )
    return decode_step(
        model, enc_out, src_mask, decoder_input_ids, training, seed, step, capture
    )


def shift_right(
    labels: np.ndarray, begin_id: int, pad_id: int, ignore_sentinel: int = -100
) -> np.ndarray:
    """Teacher forcing input: [begin, label_0, ..., label_{T-2}], sentinel -> pad."""
    labels = np.asarray(labels)
    squeeze = labels.ndim == 1
    if squeeze:
        labels = labels[None, :]
    out = np.empty_like(labels)
    out[:, 0] = begin_id
    shifted = labels[:, :-1]
    out[:, 1:] = np.where(shifted == ignore_sentinel, pad_id, shifted)
    return out[0] if squeeze else out


# --- generation -----------------------------------------------------------------


def greedy_generate_batch(
    model: Seq2SeqModel,
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    bos_id: int,
    eos_id: int,
    max_len: int = 20,
) -> list[list[int]]:
    """Greedy decode a whole batch; each output ends at eos or max_len."""
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    input_ids = _check_ids(model, input_ids, "input_ids")
    batch = input_ids.shape[0]
    enc_out, src_mask = encode_source(model, input_ids, attention_mask)
    prefix = np.full((batch, 1), bos_id, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(batch)]
    for _ in range(max_len):
        logits = decode_step(model, enc_out, src_mask, prefix)
        next_ids = logits.data[:, -1, :].argmax(axis=1)
        for row in range(batch):
            if done[row]:
                continue
            token = int(next_ids[row])
            outputs[row].append(token)
            if token == eos_id:
                done[row] = True
        if done.all():
            break
        prefix = np.concatenate([prefix, next_ids[:, None].astype(np.int64)], axis=1)
    return outputs


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    with np.errstate(under="ignore"):
        return shifted - np.log(np.exp(shifted).sum())


def beam_generate(
    model: Seq2SeqModel,
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    bos_id: int,
    eos_id: int,
    max_len: int = 20,
    beam_width: int = 1,
) -> list[int]:
    """Beam search on one example; final ranking is length-normalized log-prob."""
    if beam_width < 1:
        raise ConfigurationError(f"beam width must be >= 1, got {beam_width}")
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    input_ids = np.asarray(input_ids)
    if input_ids.ndim == 1:
        input_ids = input_ids[None, :]
        attention_mask = np.asarray(attention_mask)[None, :]
    enc_out, src_mask = encode_source(model, input_ids, attention_mask)

    beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_len):
        if not beams:
            break
        candidates: list[tuple[tuple[int, ...], float]] = []
        for ids, score in beams:
            prefix = np.array([[bos_id, *ids]], dtype=np.int64)
            logits = decode_step(model, enc_out, src_mask, prefix)
            logp = _log_softmax(logits.data[0, -1, :].astype(np.float64))
            top = np.argsort(-logp, kind="stable")[:beam_width]
            for token in top:
                candidates.append((ids + (int(token),), score + float(logp[token])))
        candidates.sort(key=lambda c: -c[1])  # stable: insertion order breaks ties
        beams = []
        for ids, score in candidates[: beam_width]:
            if ids[-1] == eos_id:
                finished.append((ids, score))
            else:
                beams.append((ids, score))
    pool = finished if finished else beams
    best = max(pool, key=lambda c: c[1] / len(c[0]))
    return list(best[0])


def generate(
    model: Seq2SeqModel,
    input_ids: np.ndarray,
    attention_mask: np.ndarray | None = None,
    bos_id: int = 2,
    eos_id: int = 3,
    max_len: int = 20,
    beam_width: int = 1,
) -> list[int]:
    """Decode one source sequence; beam_width 1 is exactly greedy."""
    input_ids = np.asarray(input_ids)
    if input_ids.ndim != 1:
        raise ContractError("generate decodes one sequence; use greedy_generate_batch for batches")
    batch_ids = input_ids[None, :]
    if attention_mask is None:
        mask = np.ones_like(batch_ids)
    else:
        mask = np.asarray(attention_mask).reshape(1, -1)
    if beam_width == 1:
        return greedy_generate_batch(model, batch_ids, mask, bos_id, eos_id, max_len)[0]
    return beam_generate(model, batch_ids, mask, bos_id, eos_id, max_len, beam_width)
