"""ROUGE-1/2/L scoring over whitespace tokens.

Scoring conventions, pinned for reproducibility:
  - tokens are whitespace-split after corpus normalization, no stemming
  - n-gram overlap is clipped by reference multiplicity
  - F1 is the plain harmonic mean (beta = 1)
  - any empty denominator yields 0.0, never NaN
  - corpus scores are macro-averaged (mean of per-example scores)
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ContractError


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class RougeReport:
    rouge1: Score
    rouge2: Score
    rougeL: Score

    def as_dict(self) -> dict:
        return {
            name: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
            for name, s in (("rouge1", self.rouge1), ("rouge2", self.rouge2), ("rougeL", self.rougeL))
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RougeReport":
        def score(name: str) -> Score:
            v = d[name]
            return Score(v["precision"], v["recall"], v["f1"])

        return cls(score("rouge1"), score("rouge2"), score("rougeL"))


def _tokens(text: str) -> list[str]:
    return text.split()


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> Score:
    """ROUGE-N precision/recall/F1 with multiplicity-clipped overlap."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    cand = _ngrams(_tokens(candidate), n)
    ref = _ngrams(_tokens(reference), n)
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return Score(precision, recall, _f1(precision, recall))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via O(mn) dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> Score:
    """ROUGE-L from the token-level longest common subsequence."""
    cand = _tokens(candidate)
    ref = _tokens(reference)
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref) if ref else 0.0
    return Score(precision, recall, _f1(precision, recall))


def score_pair(candidate: str, reference: str) -> RougeReport:
    """All three metrics for one candidate/reference pair."""
    return RougeReport(
        rouge1=rouge_n(candidate, reference, 1),
        rouge2=rouge_n(candidate, reference, 2),
        rougeL=rouge_l(candidate, reference),
    )


def corpus_rouge(pairs: Iterable[tuple[str, str]]) -> RougeReport:
    """Macro-average: arithmetic mean of per-example P, R, F1 per metric."""
    reports = [score_pair(c, r) for c, r in pairs]
    if not reports:
        raise ContractError("corpus_rouge requires at least one (candidate, reference) pair")

    def mean(values: list[float]) -> float:
        return sum(values) / len(values)

    def averaged(pick) -> Score:
        return Score(
            mean([pick(r).precision for r in reports]),
            mean([pick(r).recall for r in reports]),
            mean([pick(r).f1 for r in reports]),
        )

    return RougeReport(
        rouge1=averaged(lambda r: r.rouge1),
        rouge2=averaged(lambda r: r.rouge2),
        rougeL=averaged(lambda r: r.rougeL),
    )


def format_report_table(rows: list[tuple[str, RougeReport]]) -> str:
    """Render reports as a table: one row per model, P/R/F1 per metric, 4 decimals."""
    header_top = f"{'Model':<32} {'ROUGE-1':>26} {'ROUGE-2':>26} {'ROUGE-L':>26}"
    header_sub = f"{'':<32} " + " ".join(f"{'P':>8} {'R':>8} {'F1':>8}" for _ in range(3))
    lines = [header_top, header_sub, "-" * len(header_sub)]
    for name, report in rows:
        cells = []
        for s in (report.rouge1, report.rouge2, report.rougeL):
            cells.append(f"{s.precision:>8.4f} {s.recall:>8.4f} {s.f1:>8.4f}")
        lines.append(f"{name:<32} " + " ".join(cells))
    return "\n".join(lines)
