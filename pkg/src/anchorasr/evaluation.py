"""Word error rates, normalised result tables, WERR and mask recall."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_len + other.ref_len,
        )

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _words(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def align(ref, hyp) -> ErrorCounts:
    """Unit-cost Levenshtein alignment of word sequences.

    Among minimum-cost alignments the backtrace prefers deletion, then
    substitution (or match), then insertion.
    """
    r, h = _words(ref), _words(hyp)
    n, m = len(r), len(h)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
                d[i - 1, j - 1] + (r[i - 1] != h[j - 1]),
            )
    i, j = n, m
    S = I = D = 0
    while i > 0 or j > 0:
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            D += 1
            i -= 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (r[i - 1] != h[j - 1]):
            S += r[i - 1] != h[j - 1]
            i -= 1
            j -= 1
        else:
            I += 1
            j -= 1
    return ErrorCounts(int(S), I, D, n)


def wer(counts: ErrorCounts) -> float:
    """(S + I + D) / reference length; an empty reference divides by 1."""
    if counts.ref_len == 0:
        return float(counts.errors)
    return counts.errors / counts.ref_len


def corpus_counts(refs: Sequence[str], hyps: Sequence[str]) -> ErrorCounts:
    if len(refs) != len(hyps):
        raise ValueError("reference and hypothesis counts differ")
    total = ErrorCounts()
    for r, h in zip(refs, hyps):
        total = total + align(r, h)
    return total


def corpus_wer(counts: ErrorCounts) -> float:
    """Corpus-level WER; an all-empty reference set divides by 1."""
    return counts.errors / max(counts.ref_len, 1)


@dataclass(frozen=True)
class Metrics:
    """WER and its decomposition, each as a fraction of reference words."""

    wer: float
    sub: float
    ins: float
    dele: float

    @classmethod
    def from_counts(cls, counts: ErrorCounts) -> "Metrics":
        n = max(counts.ref_len, 1)
        return cls(counts.errors / n, counts.substitutions / n, counts.insertions / n, counts.deletions / n)

    def scaled(self, k: float) -> "Metrics":
        return Metrics(self.wer * k, self.sub * k, self.ins * k, self.dele * k)


@dataclass(frozen=True)
class NormalizedReport:
    rows: dict
    baseline_normal_wer: float


def normalize_report(metrics: Mapping[str, Metrics], baseline_normal_wer: float) -> NormalizedReport:
    """Divide every quantity by the baseline's WER on the normal test set."""
    if not baseline_normal_wer > 0:
        raise ValueError("baseline normal-set WER must be positive to normalise")
    k = 1.0 / baseline_normal_wer
    return NormalizedReport({name: m.scaled(k) for name, m in metrics.items()}, baseline_normal_wer)


def werr(baseline_wer: float, system_wer: float) -> float:
    """Relative WER reduction in percent; positive means the system is better."""
    if not baseline_wer > 0:
        raise ValueError("baseline WER must be positive")
    return 100.0 * (baseline_wer - system_wer) / baseline_wer


def mask_recall(phi, gold, threshold: float = 0.5) -> tuple[float | None, float | None]:
    """Per-class recall of thresholded frame gates; ``None`` when a class is absent.

    A frame is predicted as 1 when ``phi >= threshold``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    gold = np.asarray(gold).astype(np.int64)
    if phi.shape != gold.shape:
        raise ValueError("phi and gold must have the same length")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    pred = (phi >= threshold).astype(np.int64)
    out = []
    for cls in (0, 1):
        sel = gold == cls
        out.append(float(np.mean(pred[sel] == cls)) if sel.any() else None)
    return out[0], out[1]


# -- score tables -----------------------------------------------------------------

SCORE_COLUMNS = ("model", "training set", "test set", "WER", "sub", "ins", "del", "WERR")


@dataclass(frozen=True)
class ScoreRow:
    model: str
    training_set: str
    test_set: str
    metrics: Metrics
    werr: float | None = None


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def score_table_csv(rows: Sequence[ScoreRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for row in rows:
        m = row.metrics
        writer.writerow(
            [
                row.model,
                row.training_set,
                row.test_set,
                _fmt(m.wer),
                _fmt(m.sub),
                _fmt(m.ins),
                _fmt(m.dele),
                "---" if row.werr is None else f"{row.werr:+.1f}",
            ]
        )
    return buf.getvalue()
