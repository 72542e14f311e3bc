"""Subword tokenizer: character-level byte-pair merges with deterministic training.

Merges operate on unicode characters (the cleaned corpus is whitelisted
Devanagari, so the alphabet stays small and byte fallback is unnecessary).
Encoding wraps text as [bos, ..., eos] and truncates from the right.
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, IntegrityError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)

DEFAULT_TASK_PREFIX = "सारांश: "

# Reserved label value outside the vocabulary id range, excluded from the loss.
IGNORE_SENTINEL = -100

TOKENIZER_FORMAT_VERSION = 1

MAX_INPUT_LEN = 1024
MAX_LABEL_LEN = 20


@dataclass(frozen=True)
class EncodedExample:
    input_ids: tuple[int, ...]
    label_ids: tuple[int, ...]


@dataclass(frozen=True)
class Batch:
    input_ids: np.ndarray  # [batch, max_src_len] int64
    attention_mask: np.ndarray  # [batch, max_src_len] int64, 1 for real tokens
    labels: np.ndarray  # [batch, max_tgt_len] int64, pads replaced by sentinel


class SubwordTokenizer:
    """Trained merge table plus vocabulary; immutable after training."""

    def __init__(
        self,
        vocab: Sequence[str],
        merges: Sequence[tuple[str, str]],
        task_prefix: str = DEFAULT_TASK_PREFIX,
    ):
        self._tokens = tuple(vocab)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        for special in SPECIAL_TOKENS:
            if special not in self._ids:
                raise ConfigurationError(f"vocabulary is missing special token {special!r}")
        self._merges = tuple((a, b) for a, b in merges)
        self.task_prefix = task_prefix
        # Specials are never matched from raw text, only added structurally.
        self._match_ids = {
            tok: i for tok, i in self._ids.items() if tok not in SPECIAL_TOKENS
        }
        self._max_token_len = max((len(t) for t in self._match_ids), default=1)

    # -- basic properties ----------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    @property
    def merges(self) -> tuple[tuple[str, str], ...]:
        return self._merges

    @property
    def vocab(self) -> dict[str, int]:
        return dict(self._ids)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK_TOKEN]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS_TOKEN]

    # -- encode / decode -------------------------------------------------------

    def _match_tokens(self, text: str) -> list[int]:
        """Greedy longest-match against the vocabulary; unknown chars -> unk."""
        ids = []
        i = 0
        n = len(text)
        while i < n:
            for length in range(min(self._max_token_len, n - i), 0, -1):
                tok_id = self._match_ids.get(text[i : i + length])
                if tok_id is not None:
                    ids.append(tok_id)
                    i += length
                    break
            else:
                ids.append(self.unk_id)
                i += 1
        return ids

    def encode(self, text: str, max_len: int | None = None, add_prefix: bool = False) -> list[int]:
        """[bos, tokens..., eos], truncated from the right to max_len."""
        if add_prefix:
            text = self.task_prefix + text
        ids = [self.bos_id] + self._match_tokens(text) + [self.eos_id]
        if max_len is not None:
            if max_len < 1:
                raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
            ids = ids[:max_len]
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Concatenate tokens, skipping special ids (unk decodes to nothing)."""
        specials = {self.pad_id, self.unk_id, self.bos_id, self.eos_id}
        pieces = []
        for i in ids:
            i = int(i)
            if i == IGNORE_SENTINEL or i in specials:
                continue
            if not 0 <= i < len(self._tokens):
                raise ContractError(f"id {i} outside vocabulary of size {len(self._tokens)}")
            pieces.append(self._tokens[i])
        return "".join(pieces)

    def encode_example(
        self,
        body: str,
        headline: str,
        max_input_len: int = MAX_INPUT_LEN,
        max_label_len: int = MAX_LABEL_LEN,
    ) -> EncodedExample:
        return EncodedExample(
            input_ids=tuple(self.encode(body, max_len=max_input_len, add_prefix=True)),
            label_ids=tuple(self.encode(headline, max_len=max_label_len)),
        )

    # -- persistence -----------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "version": TOKENIZER_FORMAT_VERSION,
            "task_prefix": self.task_prefix,
            "specials": {
                "pad": self.pad_id,
                "unk": self.unk_id,
                "bos": self.bos_id,
                "eos": self.eos_id,
            },
            "vocab": list(self._tokens),
            "merges": [list(pair) for pair in self._merges],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), ensure_ascii=False, indent=0), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "SubwordTokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        version = payload.get("version")
        if version != TOKENIZER_FORMAT_VERSION:
            raise IntegrityError(
                f"unknown tokenizer format version {version!r}, expected {TOKENIZER_FORMAT_VERSION}"
            )
        return cls(
            vocab=payload["vocab"],
            merges=[tuple(p) for p in payload["merges"]],
            task_prefix=payload["task_prefix"],
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_payload(), ensure_ascii=False, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def train_tokenizer(
    texts: Iterable[str],
    vocab_size: int,
    task_prefix: str = DEFAULT_TASK_PREFIX,
) -> SubwordTokenizer:
    """Learn byte-pair merges: greedy highest-frequency pair, lexicographic ties.

    The alphabet is the character set of the corpus plus the task prefix (so the
    prefix never encodes to unknowns). Training stops when the vocabulary
    reaches vocab_size or no adjacent pair repeats.
    """
    corpus = [t for t in texts if t]
    if not corpus:
        raise ConfigurationError("cannot train a tokenizer on an empty corpus")
    alphabet = sorted(set("".join(corpus)) | set(task_prefix))
    min_vocab = len(SPECIAL_TOKENS) + len(alphabet)
    if vocab_size < min_vocab:
        raise ConfigurationError(
            f"vocab_size {vocab_size} below minimum {min_vocab} (alphabet {len(alphabet)} + "
            f"{len(SPECIAL_TOKENS)} specials)"
        )

    vocab: list[str] = list(SPECIAL_TOKENS) + alphabet
    known = set(vocab)
    merges: list[tuple[str, str]] = []
    sequences = [list(t) for t in corpus]

    while len(vocab) < vocab_size:
        counts: Counter = Counter()
        for seq in sequences:
            for i in range(len(seq) - 1):
                counts[(seq[i], seq[i + 1])] += 1
        # a pair must occur at least twice to be worth a merge
        candidates = [(pair, count) for pair, count in counts.items() if count >= 2]
        if not candidates:
            break
        best_pair = min(candidates, key=lambda pc: (-pc[1], pc[0]))[0]
        merged = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        if merged not in known:
            vocab.append(merged)
            known.add(merged)
        sequences = [_apply_merge(seq, best_pair, merged) for seq in sequences]

    return SubwordTokenizer(vocab=vocab, merges=merges, task_prefix=task_prefix)


def _apply_merge(seq: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def collate(
    examples: Sequence[EncodedExample],
    pad_id: int,
    ignore_sentinel: int = IGNORE_SENTINEL,
) -> Batch:
    """Dynamic padding: widths are the batch maxima, never global constants."""
    if not examples:
        raise ContractError("collate requires a non-empty batch")
    max_src = max(len(e.input_ids) for e in examples)
    max_tgt = max(len(e.label_ids) for e in examples)
    batch = len(examples)
    input_ids = np.full((batch, max_src), pad_id, dtype=np.int64)
    attention_mask = np.zeros((batch, max_src), dtype=np.int64)
    labels = np.full((batch, max_tgt), ignore_sentinel, dtype=np.int64)
    for row, example in enumerate(examples):
        src = list(example.input_ids)
        tgt = list(example.label_ids)
        input_ids[row, : len(src)] = src
        attention_mask[row, : len(src)] = 1
        labels[row, : len(tgt)] = tgt
    return Batch(input_ids=input_ids, attention_mask=attention_mask, labels=labels)
