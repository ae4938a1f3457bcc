"""Sentence correlations, word-tag classification scores and span F1."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qekit import kernels
from qekit.data import ErrorSpan, Severity, WordTag, check_spans


class UndefinedCorrelation(ValueError):
    """Correlation with a constant vector is undefined."""


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("correlation needs at least two points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("correlation inputs must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelation("correlation with a constant vector is undefined")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    return max(-1.0, min(1.0, r))


def pearson(x, y) -> float:
    return _pearson(*_pair(x, y))


def rank(x) -> np.ndarray:
    """1-based ranks, ties share their average rank."""
    return kernels.average_ranks(np.asarray(x, dtype=np.float64).ravel())


def spearman(x, y) -> float:
    x, y = _pair(x, y)
    return _pearson(kernels.average_ranks(x), kernels.average_ranks(y))


def kendall(x, y) -> float:
    """Kendall tau-b by direct pair counting."""
    x, y = _pair(x, y)
    s, nx, ny = kernels.kendall_counts(x, y)
    return max(-1.0, min(1.0, s / math.sqrt(float(nx) * float(ny))))


# ---------------------------------------------------------------------------
# word level


def _tag_array(tags) -> np.ndarray:
    """Flatten tags (nested per sample, or flat) into an int array with BAD = 1."""
    flat = []
    for t in tags:
        if isinstance(t, (list, tuple, np.ndarray)):
            flat.extend(int(WordTag.parse(int(u) if isinstance(u, np.integer) else u)) for u in t)
        else:
            flat.append(int(WordTag.parse(int(t) if isinstance(t, np.integer) else t)))
    return np.asarray(flat, dtype=np.int64)


def _aligned(pred, gold) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, np.ndarray) and isinstance(gold, np.ndarray) and pred.ndim == gold.ndim == 1:
        p, g = pred.astype(np.int64), gold.astype(np.int64)
    else:
        p, g = _tag_array(pred), _tag_array(gold)
        if len(pred) == len(gold):
            for a, b in zip(pred, gold):
                if isinstance(a, (list, tuple, np.ndarray)) and len(a) != len(b):
                    raise ValueError(f"tag length mismatch within a sample: {len(a)} vs {len(b)}")
    if p.size != g.size:
        raise ValueError(f"tag length mismatch: {p.size} vs {g.size}")
    return p, g


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(pred, gold) -> ConfusionCounts:
    p, g = _aligned(pred, gold)
    return ConfusionCounts(*(int(v) for v in kernels.confusion(p, g)))


def mcc(pred, gold) -> float:
    """Matthews correlation, BAD as the positive class; 0 when undefined."""
    c = confusion(pred, gold)
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def f1_class(pred, gold, positive=WordTag.BAD) -> float:
    c = confusion(pred, gold)
    if WordTag.parse(positive) == WordTag.BAD:
        tp, fp, fn = c.tp, c.fp, c.fn
    else:
        tp, fp, fn = c.tn, c.fn, c.fp
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


# ---------------------------------------------------------------------------
# span level


@dataclass(frozen=True)
class SpanScore:
    weighted_tp: float
    pred_chars: int
    gold_chars: int

    @property
    def precision(self) -> float:
        return self.weighted_tp / self.pred_chars if self.pred_chars else 0.0

    @property
    def recall(self) -> float:
        return self.weighted_tp / self.gold_chars if self.gold_chars else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "SpanScore") -> "SpanScore":
        return SpanScore(
            self.weighted_tp + other.weighted_tp,
            self.pred_chars + other.pred_chars,
            self.gold_chars + other.gold_chars,
        )


def paint(spans: Sequence[ErrorSpan], length: int) -> np.ndarray:
    """Per-character severity codes (0 OK, 1 MINOR, 2 MAJOR)."""
    check_spans(spans, length)
    out = np.zeros(length, dtype=np.int8)
    for sp in spans:
        out[sp.start : sp.end] = int(Severity.parse(sp.severity))
    return out


def span_f1(pred_spans: Sequence[ErrorSpan], gold_spans: Sequence[ErrorSpan], mt_length: int) -> SpanScore:
    """Character-level span score; a severity mismatch earns half credit."""
    tp2, npred, ngold = kernels.span_credit(paint(pred_spans, mt_length), paint(gold_spans, mt_length))
    return SpanScore(tp2 / 2.0, int(npred), int(ngold))


def span_f1_corpus(items) -> SpanScore:
    """Micro-average over ``(pred_spans, gold_spans, mt_length)`` triples."""
    total = SpanScore(0.0, 0, 0)
    for pred, gold, n in items:
        total = total + span_f1(pred, gold, n)
    return total
