"""Corpus ingestion, Devanagari-only cleaning, statistics, and splits.

Corpus files are line-delimited UTF-8, one JSON object per line with fields
id, source, category, headline, body and optional url, date.
"""
from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, IngestError

DEVANAGARI_START = 0x0900
DEVANAGARI_END = 0x097F

# The cleaning whitelist keeps the Devanagari block (danda and Devanagari
# digits included), whitespace, and this configurable punctuation set.
DEFAULT_PUNCTUATION = frozenset({",", "?", "!", '"', "'", "“", "”", "‘", "’"})

PAPER_CATEGORIES = (
    "News",
    "Sports",
    "Others(Mix)",
    "Opinion",
    "Entertainment",
    "Feature",
    "Diaspora",
    "World",
    "Education",
    "Blog",
)

_TAG_RE = re.compile(r"<[^<>]*>")
_WS_RE = re.compile(r"\s+")

REQUIRED_FIELDS = ("id", "source", "category", "headline", "body")


@dataclass(frozen=True)
class ArticleRecord:
    id: str
    source: str
    category: str
    headline: str
    body: str
    url: str | None = None
    date: str | None = None

    def as_dict(self) -> dict:
        d = {
            "id": self.id,
            "source": self.source,
            "category": self.category,
            "headline": self.headline,
            "body": self.body,
        }
        if self.url is not None:
            d["url"] = self.url
        if self.date is not None:
            d["date"] = self.date
        return d


@dataclass(frozen=True)
class CleaningConfig:
    punctuation: frozenset[str] = DEFAULT_PUNCTUATION
    strict: bool = False


@dataclass
class IngestReport:
    records_read: int = 0
    kept: int = 0
    dropped_empty: int = 0
    dropped_duplicate_id: int = 0
    malformed: int = 0


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    ratios: tuple[float, float, float]
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train_ids), len(self.val_ids), len(self.test_ids))

    def save(self, path: str | Path) -> None:
        payload = {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            seed=int(payload["seed"]),
            ratios=tuple(float(r) for r in payload["ratios"]),
            train_ids=tuple(payload["train_ids"]),
            val_ids=tuple(payload["val_ids"]),
            test_ids=tuple(payload["test_ids"]),
        )


@dataclass(frozen=True)
class CategoryStats:
    counts: dict[str, int]
    total: int


def clean_text(raw: str, punctuation: frozenset[str] = DEFAULT_PUNCTUATION) -> str:
    """Strip markup, drop non-whitelisted characters, normalize whitespace.

    Total function: any unicode input is accepted and the result may be empty.
    Disallowed characters become spaces (never silently joining neighbours),
    then whitespace runs collapse to single spaces.
    """
    text = raw
    while True:  # nested tags expose inner brackets after one pass
        stripped = _TAG_RE.sub(" ", text)
        if stripped == text:
            break
        text = stripped

    kept = []
    for ch in text:
        if DEVANAGARI_START <= ord(ch) <= DEVANAGARI_END or ch in punctuation:
            kept.append(ch)
        else:
            kept.append(" ")
    return _WS_RE.sub(" ", "".join(kept)).strip()


def clean_record(record: ArticleRecord, config: CleaningConfig = CleaningConfig()) -> ArticleRecord:
    return ArticleRecord(
        id=record.id,
        source=record.source,
        category=record.category,
        headline=clean_text(record.headline, config.punctuation),
        body=clean_text(record.body, config.punctuation),
        url=record.url,
        date=record.date,
    )


def _parse_line(line: str) -> ArticleRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    missing = [f for f in REQUIRED_FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    return ArticleRecord(
        id=str(obj["id"]),
        source=str(obj["source"]),
        category=str(obj["category"]),
        headline=str(obj["headline"]),
        body=str(obj["body"]),
        url=obj.get("url"),
        date=obj.get("date"),
    )


def ingest(
    path: str | Path, config: CleaningConfig = CleaningConfig()
) -> tuple[list[ArticleRecord], IngestReport]:
    """Read a corpus file, clean every record, drop empty and duplicate-id rows.

    Malformed lines are counted and skipped unless config.strict, which aborts.
    An unreadable file is always fatal.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read corpus file {path}: {exc}") from exc

    report = IngestReport()
    records: list[ArticleRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = _parse_line(line)
        except ValueError as exc:
            if config.strict:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            report.malformed += 1
            continue
        report.records_read += 1
        if record.id in seen_ids:
            report.dropped_duplicate_id += 1
            continue
        seen_ids.add(record.id)
        cleaned = clean_record(record, config)
        if not cleaned.headline or not cleaned.body:
            report.dropped_empty += 1
            continue
        report.kept += 1
        records.append(cleaned)
    return records, report


def write_corpus(records: Iterable[ArticleRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.as_dict(), ensure_ascii=False) + "\n")


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Deterministic rounding rule: round-half-up for train and val, remainder to test."""
    import math

    train = math.floor(ratios[0] * n + 0.5)
    val = math.floor(ratios[1] * n + 0.5)
    test = n - train - val
    if test < 0:
        # cannot happen for ratio triples summing to 1, kept as a guard
        raise ConfigurationError(f"ratios {ratios} produce negative test size for n={n}")
    return train, val, test


def _validate_ratios(ratios: tuple[float, float, float]) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigurationError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1 within 1e-9, got {sum(ratios)!r}")


def split_ids(
    ids: Sequence[str], ratios: tuple[float, float, float] = (0.70, 0.20, 0.10), seed: int = 0
) -> SplitManifest:
    """Split ids deterministically: sort lexicographically, seeded shuffle, cut.

    Sorting before shuffling makes the split invariant to input order.
    """
    _validate_ratios(ratios)
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise ConfigurationError("ids to split must be unique")
    rng = random.Random(seed)
    rng.shuffle(ordered)
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    return SplitManifest(
        seed=seed,
        ratios=ratios,
        train_ids=tuple(ordered[:n_train]),
        val_ids=tuple(ordered[n_train : n_train + n_val]),
        test_ids=tuple(ordered[n_train + n_val :]),
    )


def split_dataset(
    records: Sequence[ArticleRecord],
    ratios: tuple[float, float, float] = (0.70, 0.20, 0.10),
    seed: int = 0,
) -> SplitManifest:
    return split_ids([r.id for r in records], ratios=ratios, seed=seed)


def category_stats(records: Iterable[ArticleRecord]) -> CategoryStats:
    counts = Counter(r.category for r in records)
    stats = CategoryStats(counts=dict(counts), total=sum(counts.values()))
    return stats


# --- synthetic corpus -------------------------------------------------------

_CONSONANTS = "कखगघङचछजझञटठडढणतथदधनपफबभमयरलवशषसह"
_MATRAS = ("", "ा", "ि", "ी", "ु", "ू", "े", "ै", "ो", "ौ")


def _word(rng: random.Random) -> str:
    return "".join(
        rng.choice(_CONSONANTS) + rng.choice(_MATRAS) for _ in range(rng.randint(2, 4))
    )


def make_synthetic_corpus(
    n: int,
    seed: int,
    headline_tokens: tuple[int, int] = (3, 12),
    body_tokens: tuple[int, int] = (50, 400),
    word_pool_size: int | None = None,
) -> list[ArticleRecord]:
    """Generate n deterministic Devanagari-only records.

    Bodies open with the headline words (a lead sentence), so a summarizer
    trained on this corpus has a learnable copy signal. With word_pool_size
    set, words are drawn from a fixed pool instead of being freshly random,
    which shares vocabulary across records (useful for overfit fixtures).
    Generated text is a fixed point of clean_text.
    """
    if n < 0:
        raise ConfigurationError(f"n must be >= 0, got {n}")
    rng = random.Random(seed)
    pool: list[str] | None = None
    if word_pool_size is not None:
        if word_pool_size < 1:
            raise ConfigurationError(f"word_pool_size must be >= 1, got {word_pool_size}")
        seen: set[str] = set()
        pool = []
        while len(pool) < word_pool_size:
            word = _word(rng)
            if word not in seen:
                seen.add(word)
                pool.append(word)

    def next_word() -> str:
        return rng.choice(pool) if pool is not None else _word(rng)

    records = []
    for i in range(n):
        headline_words = [next_word() for _ in range(rng.randint(*headline_tokens))]
        body_len = rng.randint(*body_tokens)
        tail_len = max(0, body_len - len(headline_words))
        body_words = headline_words + [next_word() for _ in range(tail_len)]
        records.append(
            ArticleRecord(
                id=f"synth-{i:06d}",
                source="synthetic",
                category=rng.choice(PAPER_CATEGORIES),
                headline=" ".join(headline_words),
                body=" ".join(body_words),
            )
        )
    return records
