"""LoRA adapters over frozen linear maps.

An adapter owns a frozen base weight (dense or quantized) plus a trainable
low-rank pair: y = base @ x + (alpha/r) * B @ (A @ drop(x)) + bias. B starts
at zero so the adapter is transparent at step 0; the base never receives a
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigurationError, ContractError
from .numerics import Tensor
from .quant import QuantizedMatrix, dequantize

BIAS_MODES = ("none", "lora_only", "all")
PROJECTION_KINDS = ("q", "k", "v", "o", "ffn_in", "ffn_out")

A_INIT_STD = 0.02


@dataclass(frozen=True)
class LoraConfig:
    r: int = 32
    alpha: float = 32.0
    dropout: float = 0.1
    bias_mode: str = "lora_only"
    target_projections: tuple[str, ...] = ("q", "v")

    def __post_init__(self):
        if self.r < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.bias_mode not in BIAS_MODES:
            raise ConfigurationError(f"bias_mode must be one of {BIAS_MODES}, got {self.bias_mode!r}")
        unknown = set(self.target_projections) - set(PROJECTION_KINDS)
        if unknown:
            raise ConfigurationError(f"unknown target projections: {sorted(unknown)}")

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def as_dict(self) -> dict:
        return {
            "r": self.r,
            "alpha": self.alpha,
            "dropout": self.dropout,
            "bias_mode": self.bias_mode,
            "target_projections": list(self.target_projections),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoraConfig":
        return cls(
            r=int(d["r"]),
            alpha=float(d["alpha"]),
            dropout=float(d["dropout"]),
            bias_mode=str(d["bias_mode"]),
            target_projections=tuple(d["target_projections"]),
        )


class LoraAdapter:
    """Trainable (A, B, optional bias) attached to a frozen [d_out, d_in] base."""

    def __init__(
        self,
        base: Tensor | QuantizedMatrix,
        config: LoraConfig,
        rng: np.random.Generator,
        name: str = "adapter",
        layer_id: int = 0,
        with_bias: bool | None = None,
    ):
        d_out, d_in = base.shape if isinstance(base, QuantizedMatrix) else base.shape
        if isinstance(base, Tensor) and base.requires_grad:
            raise ContractError("adapter base must be frozen")
        self.base = base
        self.config = config
        self.name = name
        self.layer_id = layer_id
        self.d_in = d_in
        self.d_out = d_out
        dtype = base.data.dtype if isinstance(base, Tensor) else np.float32
        self.A = nm.parameter(
            rng.normal(0.0, A_INIT_STD, size=(config.r, d_in)).astype(dtype), name=f"{name}.A"
        )
        self.B = nm.parameter(np.zeros((d_out, config.r), dtype=dtype), name=f"{name}.B")
        if with_bias is None:
            with_bias = config.bias_mode in ("lora_only", "all")
        self.bias = (
            nm.parameter(np.zeros(d_out, dtype=dtype), name=f"{name}.bias") if with_bias else None
        )

    @property
    def scaling(self) -> float:
        return self.config.scaling

    def base_dense(self) -> np.ndarray:
        if isinstance(self.base, QuantizedMatrix):
            return dequantize(self.base)
        return self.base.data

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = {f"{self.name}.A": self.A, f"{self.name}.B": self.B}
        if self.bias is not None:
            params[f"{self.name}.bias"] = self.bias
        return params


def lora_forward(
    adapter: LoraAdapter,
    x: Tensor,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
) -> Tensor:
    """Apply the adapted linear map to feature-last activations [..., d_in]."""
    if x.shape[-1] != adapter.d_in:
        raise ContractError(
            f"{adapter.name}: input width {x.shape[-1]} does not match d_in {adapter.d_in}"
        )
    base_w = nm.constant(adapter.base_dense().astype(x.data.dtype, copy=False))
    y = nm.matmul(x, nm.transpose(base_w))

    dropped = nm.dropout(x, adapter.config.dropout, (seed, adapter.layer_id, step), training)
    down = nm.matmul(dropped, nm.transpose(adapter.A))  # [..., r]
    up = nm.matmul(down, nm.transpose(adapter.B))  # [..., d_out]
    y = nm.add(y, nm.scale(up, adapter.scaling))
    if adapter.bias is not None:
        y = nm.add(y, adapter.bias)
    return y


def merge(adapter: LoraAdapter) -> np.ndarray:
    """Dense inference weight: dequantized base + scaling * B @ A."""
    base = adapter.base_dense().astype(np.float64)
    update = adapter.scaling * (adapter.B.data.astype(np.float64) @ adapter.A.data.astype(np.float64))
    return (base + update).astype(adapter.A.data.dtype)


def trainable_parameter_count(obj) -> int:
    """Count trainable entries of anything exposing trainable_parameters()."""
    params = obj.trainable_parameters()
    return int(sum(p.data.size for p in params.values()))
