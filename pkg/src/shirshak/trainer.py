"""Fine-tuning loop: AdamW with decoupled weight decay, per-epoch ROUGE
validation, adapter-only checkpoints.

Only the adapter parameters ever move; the base is hashed before and after
so freeze violations surface immediately.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .checkpoint import save_checkpoint
from .corpus import ArticleRecord
from .errors import ConfigurationError, TrainingError
from .model import Seq2SeqModel, forward, greedy_generate_batch, shift_right
from .rouge import RougeReport, corpus_rouge
from .tokenizer import IGNORE_SENTINEL, EncodedExample, SubwordTokenizer, collate


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 5
    epochs: int = 3
    eval_strategy: str = "epoch"
    seed: int = 0
    lr_schedule: str = "linear"  # "linear" decays to zero over total steps
    gradient_clip_norm: float | None = 1.0
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_input_len: int = 1024
    max_label_len: int = 20
    eval_batch_size: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_schedule not in ("linear", "constant"):
            raise ConfigurationError(f"lr_schedule must be linear or constant, got {self.lr_schedule!r}")
        if self.eval_strategy != "epoch":
            raise ConfigurationError(f"only per-epoch evaluation is supported, got {self.eval_strategy!r}")

    def as_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "eval_strategy": self.eval_strategy,
            "seed": self.seed,
            "lr_schedule": self.lr_schedule,
            "gradient_clip_norm": self.gradient_clip_norm,
            "max_steps": self.max_steps,
        }


@dataclass
class EpochReport:
    epoch: int
    mean_train_loss: float
    rouge: RougeReport
    seconds: float
    checkpoint_path: str
    steps: int

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_train_loss": self.mean_train_loss,
            "rouge": self.rouge.as_dict(),
            "seconds": self.seconds,
            "checkpoint_path": self.checkpoint_path,
            "steps": self.steps,
        }


class AdamState:
    """First/second moments plus per-parameter step counters."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


def optimizer_step(
    params: dict[str, nm.Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """AdamW update with bias correction and decoupled weight decay.

    Decay is multiplicative on the incoming parameter: p *= (1 - lr * wd),
    in addition to the adaptive step.
    """
    state.t += 1
    t = state.t
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        grad = grad.astype(param.data.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        param.data = param.data * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    key = ((seed << 20) ^ epoch) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.Generator(np.random.Philox(key=np.uint64(key)))
    return rng.permutation(n)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def encode_records(
    tokenizer: SubwordTokenizer,
    records: Sequence[ArticleRecord],
    max_input_len: int,
    max_label_len: int,
) -> list[EncodedExample]:
    return [
        tokenizer.encode_example(r.body, r.headline, max_input_len, max_label_len) for r in records
    ]


def evaluate(
    model: Seq2SeqModel,
    records: Sequence[ArticleRecord],
    tokenizer: SubwordTokenizer,
    max_label_len: int = 20,
    max_input_len: int = 1024,
    batch_size: int = 16,
    generate_fn: Callable[[ArticleRecord], str] | None = None,
) -> RougeReport:
    """Greedy-decode a headline for every record and macro-average ROUGE.

    generate_fn swaps in a fixture decoder (record -> candidate text) for tests.
    """
    if not records:
        raise ConfigurationError("evaluate requires a non-empty split")
    pairs: list[tuple[str, str]] = []
    if generate_fn is not None:
        pairs = [(generate_fn(r), r.headline) for r in records]
        return corpus_rouge(pairs)
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        encoded = [
            EncodedExample(
                input_ids=tuple(tokenizer.encode(r.body, max_len=max_input_len, add_prefix=True)),
                label_ids=(),
            )
            for r in chunk
        ]
        batch = collate(encoded, pad_id=tokenizer.pad_id)
        outputs = greedy_generate_batch(
            model,
            batch.input_ids,
            batch.attention_mask,
            bos_id=tokenizer.bos_id,
            eos_id=tokenizer.eos_id,
            max_len=max_label_len,
        )
        for record, ids in zip(chunk, outputs):
            pairs.append((tokenizer.decode(ids), record.headline))
    return corpus_rouge(pairs)


def finetune(
    model: Seq2SeqModel,
    tokenizer: SubwordTokenizer,
    train_records: Sequence[ArticleRecord],
    val_records: Sequence[ArticleRecord],
    config: TrainConfig,
    run_dir: str | Path,
) -> list[EpochReport]:
    """Train the attached adapters; one report and one checkpoint per epoch."""
    if not train_records:
        raise ConfigurationError("finetune requires a non-empty train split")
    if not val_records:
        raise ConfigurationError("finetune requires a non-empty validation split")
    if not model.adapters:
        raise ConfigurationError("finetune requires a model with adapters attached")

    run_dir = Path(run_dir)
    checkpoints_dir = run_dir / "checkpoints"
    checkpoints_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "epoch_reports.jsonl"

    train_examples = encode_records(tokenizer, train_records, config.max_input_len, config.max_label_len)
    params = model.trainable_parameters()
    state = AdamState()
    tokenizer_hash = tokenizer.fingerprint()
    base_hash_before = model.base_hash()

    steps_per_epoch = -(-len(train_examples) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    reports: list[EpochReport] = []
    global_step = 0
    for epoch in range(config.epochs):
        epoch_start = time.monotonic()
        losses: list[float] = []
        order = _epoch_order(len(train_examples), config.seed, epoch)
        for batch_indices in _batches(order, config.batch_size):
            if config.max_steps is not None and global_step >= config.max_steps:
                break
            batch = collate([train_examples[i] for i in batch_indices], pad_id=tokenizer.pad_id)
            decoder_input = shift_right(
                batch.labels, begin_id=tokenizer.bos_id, pad_id=tokenizer.pad_id
            )
            logits = forward(
                model,
                batch.input_ids,
                batch.attention_mask,
                decoder_input,
                training=True,
                seed=config.seed,
                step=global_step,
            )
            flat_logits = nm.reshape(logits, (-1, model.config.vocab_size))
            loss = nm.cross_entropy(flat_logits, batch.labels.reshape(-1), IGNORE_SENTINEL)
            grads = nm.gradients(loss, params)
            if config.gradient_clip_norm is not None:
                grads = clip_gradients(grads, config.gradient_clip_norm)
            if config.lr_schedule == "linear":
                lr = config.learning_rate * (1.0 - global_step / total_steps)
            else:
                lr = config.learning_rate
            optimizer_step(
                params,
                grads,
                state,
                lr=lr,
                weight_decay=config.weight_decay,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.eps,
            )
            losses.append(float(loss.data))
            global_step += 1

        rouge = evaluate(
            model,
            list(val_records),
            tokenizer,
            max_label_len=config.max_label_len,
            max_input_len=config.max_input_len,
            batch_size=config.eval_batch_size,
        )
        checkpoint_path = checkpoints_dir / f"epoch_{epoch + 1:03d}.nphd"
        save_checkpoint(checkpoint_path, model, tokenizer_hash, epoch + 1)
        report = EpochReport(
            epoch=epoch + 1,
            mean_train_loss=float(np.mean(losses)) if losses else 0.0,
            rouge=rouge,
            seconds=time.monotonic() - epoch_start,
            checkpoint_path=str(checkpoint_path),
            steps=len(losses),
        )
        reports.append(report)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(report.as_dict(), ensure_ascii=False) + "\n")

    if model.base_hash() != base_hash_before:
        raise TrainingError("frozen base weights changed during training")
    return reports
