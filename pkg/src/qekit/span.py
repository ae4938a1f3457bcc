"""Word tags to character spans, and pseudo-reference channel weighting."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from qekit.data import ErrorSpan, Severity, WordTag

QE_ONLY_BELOW = 0.5


class SeverityMode(enum.Enum):
    ALL_MINOR = "minor"
    ALL_MAJOR = "major"

    @property
    def severity(self) -> Severity:
        return Severity.MINOR if self is SeverityMode.ALL_MINOR else Severity.MAJOR


def labels_to_spans(labels: Sequence[int], ranges: Sequence[tuple[int, int]]) -> list[ErrorSpan]:
    """Merge maximal runs of equal non-OK severities into character spans.

    A run covers its first token's start through its last token's end, so
    the whitespace between merged tokens belongs to the span.
    """
    if len(labels) != len(ranges):
        raise ValueError(f"{len(labels)} labels for {len(ranges)} tokens")
    spans: list[ErrorSpan] = []
    run_sev, run_start, run_end = 0, 0, 0
    for lab, (a, b) in zip(labels, ranges):
        lab = int(lab)
        if lab != 0 and lab == run_sev:
            run_end = b
            continue
        if run_sev:
            spans.append(ErrorSpan(run_start, run_end, Severity(run_sev)))
        run_sev, run_start, run_end = lab, a, b
    if run_sev:
        spans.append(ErrorSpan(run_start, run_end, Severity(run_sev)))
    return spans


def tags_to_spans(
    tags: Sequence, ranges: Sequence[tuple[int, int]], mode: SeverityMode = SeverityMode.ALL_MAJOR
) -> list[ErrorSpan]:
    sev = int(mode.severity)
    return labels_to_spans([sev if WordTag.parse(t) == WordTag.BAD else 0 for t in tags], ranges)


def spans_to_tags(spans: Sequence[ErrorSpan], ranges: Sequence[tuple[int, int]]) -> list[WordTag]:
    """BAD for every token whose range intersects a span."""
    out = []
    for a, b in ranges:
        hit = any(sp.start < b and a < sp.end for sp in spans)
        out.append(WordTag.BAD if hit else WordTag.OK)
    return out


@dataclass(frozen=True)
class ChannelWeights:
    qe_only: bool
    src_weight: float
    ref_weight: float
    uni_weight: float

    def as_dict(self) -> dict[str, float]:
        return {"src": self.src_weight, "ref": self.ref_weight, "uni": self.uni_weight}


def channel_weights(reference_score: float) -> ChannelWeights:
    """Input weights for the source-only, reference-only and unified channels.

    A pseudo-reference scoring below 0.5 is not trusted and only the
    source (QE) channel is used.
    """
    reference_score = float(reference_score)
    if not (0.0 <= reference_score <= 1.0):
        raise ValueError(f"reference_score {reference_score} outside [0, 1]")
    if reference_score < QE_ONLY_BELOW:
        return ChannelWeights(True, 1.0, 0.0, 0.0)
    diff = 1 - reference_score
    src_weight = 2 * diff
    ref_weight = (1 - src_weight) * 0.4
    uni_weight = (1 - src_weight) * 0.6
    return ChannelWeights(False, src_weight, ref_weight, uni_weight)


def combine_channels(channels: Mapping[str, np.ndarray], weights: ChannelWeights) -> np.ndarray:
    """Mix per-token severity distributions ``[n_tokens, 3]`` across channels."""
    if weights.qe_only:
        if "src" not in channels:
            raise ValueError("QE-only weighting needs the 'src' channel")
        return np.array(channels["src"], dtype=np.float64)
    out = None
    n = None
    for name, w in weights.as_dict().items():
        if w == 0.0:
            continue
        if name not in channels:
            raise ValueError(f"channel {name!r} has weight {w} but was not provided")
        dist = np.asarray(channels[name], dtype=np.float64)
        if dist.ndim != 2 or dist.shape[1] != 3:
            raise ValueError(f"channel {name!r} must have shape [n_tokens, 3]")
        if n is not None and dist.shape[0] != n:
            raise ValueError(f"channel {name!r} has {dist.shape[0]} tokens, expected {n}")
        n = dist.shape[0]
        out = w * dist if out is None else out + w * dist
    if out is None:
        raise ValueError("all channel weights are zero")
    return out


def severities_from_dist(dist: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(dist), axis=1)
