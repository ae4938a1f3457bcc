"""Dataset types, DA normalisation and JSONL I/O."""

from __future__ import annotations

import enum
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class FormatError(ValueError):
    """A record on disk violates the documented format."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class WordTag(enum.IntEnum):
    OK = 0
    BAD = 1

    @classmethod
    def parse(cls, value) -> "WordTag":
        if isinstance(value, WordTag):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown word tag {value!r}") from None
        if value in (0, 1) and not isinstance(value, bool):
            return cls(int(value))
        raise ValueError(f"unknown word tag {value!r}")


class Severity(enum.IntEnum):
    OK = 0
    MINOR = 1
    MAJOR = 2

    @classmethod
    def parse(cls, value) -> "Severity":
        if isinstance(value, Severity):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown severity {value!r}") from None
        if value in (0, 1, 2) and not isinstance(value, bool):
            return cls(int(value))
        raise ValueError(f"unknown severity {value!r}")

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ErrorSpan:
    start: int
    end: int
    severity: Severity = Severity.MAJOR

    def __post_init__(self):
        if self.severity not in (Severity.MINOR, Severity.MAJOR):
            raise ValueError("an error span must be MINOR or MAJOR")
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "severity": self.severity.label}


def check_spans(spans: Sequence[ErrorSpan], length: int) -> None:
    """Raise unless ``spans`` are sorted, disjoint and inside ``[0, length)``."""
    prev_end = 0
    for sp in spans:
        if sp.end > length:
            raise ValueError(f"span [{sp.start}, {sp.end}) exceeds text length {length}")
        if sp.start < prev_end:
            raise ValueError(f"span [{sp.start}, {sp.end}) overlaps or is out of order")
        prev_end = sp.end


_WORD_RE = re.compile(r"\S+")


def word_ranges(text: str) -> list[tuple[int, int]]:
    """Character ranges of whitespace-separated words.

    Python strings index by code point, so offsets count Unicode scalar values.
    """
    return [m.span() for m in _WORD_RE.finditer(text)]


def count_words(text: str) -> int:
    return len(word_ranges(text))


@dataclass(frozen=True)
class QESample:
    id: str
    lp: str
    src: str
    mt: str
    score: float | None = None
    tags: tuple[WordTag, ...] | None = None
    spans: tuple[ErrorSpan, ...] | None = None

    def __post_init__(self):
        if self.score is not None:
            score = float(self.score)
            if not (0.0 <= score <= 1.0):
                raise ValueError(f"sample {self.id}: score {score} outside [0, 1]")
            object.__setattr__(self, "score", score)
        if self.tags is not None:
            tags = tuple(WordTag.parse(t) for t in self.tags)
            n = count_words(self.mt)
            if len(tags) != n:
                raise ValueError(f"sample {self.id}: {len(tags)} tags for {n} target words")
            object.__setattr__(self, "tags", tags)
        if self.spans is not None:
            spans = tuple(self.spans)
            check_spans(spans, len(self.mt))
            object.__setattr__(self, "spans", spans)

    @property
    def n_words(self) -> int:
        return count_words(self.mt)

    def to_json(self) -> dict:
        rec = {"id": self.id, "lp": self.lp, "src": self.src, "mt": self.mt}
        if self.score is not None:
            rec["score"] = self.score
        if self.tags is not None:
            rec["tags"] = [t.name for t in self.tags]
        if self.spans is not None:
            rec["spans"] = [sp.to_json() for sp in self.spans]
        return rec


@dataclass(frozen=True)
class Dataset:
    samples: tuple[QESample, ...] = ()
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        samples = tuple(self.samples)
        seen = set()
        for s in samples:
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def language_pairs(self) -> list[str]:
        return sorted({s.lp for s in self.samples})

    def by_lp(self) -> dict[str, list[QESample]]:
        out: dict[str, list[QESample]] = {}
        for s in self.samples:
            out.setdefault(s.lp, []).append(s)
        return out


def normalize_da(raw: float) -> float:
    """Map a 0-100 direct assessment to [0, 1]."""
    raw = float(raw)
    if not (0.0 <= raw <= 100.0):
        raise ValueError(f"DA score {raw} outside [0, 100]")
    return raw / 100.0


def aggregate_scores(raws: Sequence[float]) -> float:
    if len(raws) == 0:
        raise ValueError("cannot aggregate an empty list of DA scores")
    return math.fsum(normalize_da(r) for r in raws) / len(raws)


# ---------------------------------------------------------------------------
# JSONL


def _require(rec, key, types, line, optional=False):
    if key not in rec or rec[key] is None:
        if optional:
            return None
        raise FormatError("missing required field", line, key)
    val = rec[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise FormatError(f"expected {types}, got {type(val).__name__}", line, key)
    return val


def sample_from_json(rec, line=None) -> QESample:
    if not isinstance(rec, dict):
        raise FormatError("record is not a JSON object", line)
    sid = _require(rec, "id", str, line)
    lp = _require(rec, "lp", str, line)
    src = _require(rec, "src", str, line)
    mt = _require(rec, "mt", str, line)
    score = _require(rec, "score", (int, float), line, optional=True)
    tags = _require(rec, "tags", list, line, optional=True)
    spans_raw = _require(rec, "spans", list, line, optional=True)
    if tags is not None:
        bad = [t for t in tags if t not in ("OK", "BAD")]
        if bad:
            raise FormatError(f"tags must be 'OK' or 'BAD', got {bad[0]!r}", line, "tags")
        if len(tags) != count_words(mt):
            raise FormatError(
                f"{len(tags)} tags for {count_words(mt)} target words", line, "tags"
            )
    spans = None
    if spans_raw is not None:
        spans = []
        for sp in spans_raw:
            try:
                start, end, sev = sp["start"], sp["end"], sp["severity"]
                if not isinstance(start, int) or not isinstance(end, int):
                    raise TypeError
                if sev not in ("minor", "major"):
                    raise ValueError
                spans.append(ErrorSpan(start, end, Severity.parse(sev)))
            except (KeyError, TypeError, ValueError):
                raise FormatError(f"malformed span {sp!r}", line, "spans") from None
    try:
        return QESample(sid, lp, src, mt, score, tags, spans)
    except ValueError as e:
        field_name = "score" if "score" in str(e) else ("spans" if "span" in str(e) else None)
        raise FormatError(str(e), line, field_name) from None


def iter_jsonl(path):
    """Yield ``(line_number, object)`` for each nonblank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON ({e.msg})", lineno) from None


def load_jsonl(path, split: str = "train") -> Dataset:
    samples = []
    seen = {}
    for lineno, rec in iter_jsonl(path):
        s = sample_from_json(rec, lineno)
        if s.id in seen:
            raise FormatError(f"duplicate id {s.id!r} (first seen on line {seen[s.id]})", lineno, "id")
        seen[s.id] = lineno
        samples.append(s)
    return Dataset(tuple(samples), split)


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(dataset: Dataset | Iterable[QESample], path) -> None:
    atomic_write(path, dumps_jsonl(s.to_json() for s in dataset))


def write_records(records: Iterable[dict], path) -> None:
    atomic_write(path, dumps_jsonl(records))
