"""Per-layer hidden states for ``[cls] target [sep] source [eos]``.

The toy encoder is a frozen, seeded stand-in for a pretrained transformer:
hash-based word embeddings plus a sinusoidal position signal at layer 0, then
``L`` residual layers that mix each row with its neighbours and the sequence
mean before a ``tanh``. Hidden states exported from a real encoder can be fed
in through the binary file format below instead.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qekit.data import FormatError, QESample, atomic_write, iter_jsonl, word_ranges

SPECIALS = ("[cls]", "[sep]", "[eos]")
SIDES = ("target", "source", "special")


@dataclass(frozen=True)
class TokenRange:
    token_index: int
    text_side: str
    char_start: int | None = None
    char_end: int | None = None

    def __post_init__(self):
        if self.text_side not in SIDES:
            raise ValueError(f"unknown text side {self.text_side!r}")
        if self.text_side != "special":
            if self.char_start is None or self.char_end is None or self.char_start >= self.char_end:
                raise ValueError(f"token {self.token_index}: bad character range")

    def to_json(self) -> dict:
        rec = {"token_index": self.token_index, "text_side": self.text_side}
        if self.text_side != "special":
            rec["char_start"] = self.char_start
            rec["char_end"] = self.char_end
        return rec


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    L: int = 4
    seed: int = 0
    max_len: int = 512

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ValueError("encoder needs d >= 1 and L >= 1")


@dataclass(frozen=True, eq=False)
class HiddenStates:
    """``layers`` has shape ``[L+1, T, d]``; ``ranges`` has one entry per token."""

    layers: np.ndarray
    ranges: tuple[TokenRange, ...]
    cls_index: int = 0

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=np.float64)
        if layers.ndim != 3:
            raise ValueError(f"hidden states must be 3-d, got shape {layers.shape}")
        if len(self.ranges) != layers.shape[1]:
            raise ValueError(f"{len(self.ranges)} token ranges for {layers.shape[1]} tokens")
        if self.ranges[self.cls_index].text_side != "special":
            raise ValueError("first token must be the [cls] special token")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "ranges", tuple(self.ranges))

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def d(self) -> int:
        return self.layers.shape[2]

    @functools.cached_property
    def target_index(self) -> np.ndarray:
        return np.array(
            [r.token_index for r in self.ranges if r.text_side == "target"], dtype=np.int64
        )

    def target_ranges(self) -> list[tuple[int, int]]:
        return [(r.char_start, r.char_end) for r in self.ranges if r.text_side == "target"]

    def __eq__(self, other):
        if not isinstance(other, HiddenStates):
            return NotImplemented
        return (
            self.cls_index == other.cls_index
            and self.ranges == other.ranges
            and self.layers.shape == other.layers.shape
            and bool(np.array_equal(self.layers, other.layers))
        )


# ---------------------------------------------------------------------------
# toy encoder


def _seed_from(*parts) -> int:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@functools.lru_cache(maxsize=65536)
def _embedding(seed: int, d: int, key: str) -> np.ndarray:
    v = np.random.default_rng(_seed_from("emb", seed, key)).normal(0.0, 0.5, size=d)
    v.setflags(write=False)
    return v


@functools.lru_cache(maxsize=64)
def _layer_weights(seed: int, d: int, L: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(_seed_from("layers", seed, d, L))
    return tuple(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)) for _ in range(L))


def _positions(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return 0.5 * np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def input_layout(sample: QESample) -> tuple[list[str], list[TokenRange]]:
    """Token keys and ranges for ``[cls] target [sep] source [eos]``."""
    tgt = word_ranges(sample.mt)
    src = word_ranges(sample.src)
    keys = ["special:[cls]"]
    ranges = [TokenRange(0, "special")]
    for a, b in tgt:
        ranges.append(TokenRange(len(keys), "target", a, b))
        keys.append("target:" + sample.mt[a:b])
    ranges.append(TokenRange(len(keys), "special"))
    keys.append("special:[sep]")
    for a, b in src:
        ranges.append(TokenRange(len(keys), "source", a, b))
        keys.append("source:" + sample.src[a:b])
    ranges.append(TokenRange(len(keys), "special"))
    keys.append("special:[eos]")
    return keys, ranges


def encode_toy(sample: QESample, cfg: EncoderConfig) -> HiddenStates:
    if not sample.mt.strip() or not sample.src.strip():
        raise ValueError(f"sample {sample.id}: source and translation must be nonempty")
    keys, ranges = input_layout(sample)
    T, d = len(keys), cfg.d
    if T > cfg.max_len:
        raise ValueError(f"sample {sample.id}: {T} tokens exceeds max_len {cfg.max_len}")
    H = np.stack([_embedding(cfg.seed, d, k) for k in keys]) + _positions(T, d)
    out = np.empty((cfg.L + 1, T, d))
    out[0] = H
    for ell, W in enumerate(_layer_weights(cfg.seed, d, cfg.L), start=1):
        nb = np.zeros_like(H)
        nb[1:] += H[:-1]
        nb[:-1] += H[1:]
        mixed = 0.5 * H + 0.25 * nb + 0.5 * H.mean(axis=0, keepdims=True)
        H = np.tanh(H + mixed @ W)
        out[ell] = H
    return HiddenStates(out, tuple(ranges))


# ---------------------------------------------------------------------------
# binary hidden-state files


def write_hidden(h: HiddenStates, path) -> None:
    header = {
        "dtype": "f32",
        "layout": "row-major",
        "dims": list(h.layers.shape),
        "ranges": [r.to_json() for r in h.ranges],
    }
    body = np.ascontiguousarray(h.layers, dtype="<f4").tobytes()
    atomic_write(path, json.dumps(header).encode("utf-8") + b"\n" + body)


def _range_from_json(rec, i) -> TokenRange:
    try:
        return TokenRange(
            int(rec["token_index"]), rec["text_side"], rec.get("char_start"), rec.get("char_end")
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad token range #{i}: {e}", 1, "ranges") from None


def read_hidden(path) -> HiddenStates:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("truncated file: no header line", 1)
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("header is not valid JSON", 1) from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object", 1)
    if header.get("dtype") != "f32":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}", 1, "dtype")
    if header.get("layout") != "row-major":
        raise FormatError(f"unsupported layout {header.get('layout')!r}", 1, "layout")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(x, int) and x > 0 for x in dims)
    ):
        raise FormatError(f"dims must be three positive integers, got {dims!r}", 1, "dims")
    body = raw[nl + 1 :]
    expected = dims[0] * dims[1] * dims[2]
    if len(body) % 4 or len(body) // 4 != expected:
        raise FormatError(
            f"size mismatch: dims {dims} need {expected} floats, body holds {len(body) / 4:g}",
            None,
            "dims",
        )
    ranges = header.get("ranges")
    if not isinstance(ranges, list) or len(ranges) != dims[1]:
        raise FormatError(f"expected {dims[1]} token ranges", 1, "ranges")
    tr = tuple(_range_from_json(r, i) for i, r in enumerate(ranges))
    layers = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(dims)
    try:
        return HiddenStates(layers, tr)
    except ValueError as e:
        raise FormatError(str(e), 1, "ranges") from None


def read_manifest(path) -> dict[str, Path]:
    """Map sample id to hidden-state file; relative paths resolve against the manifest."""
    base = Path(path).parent
    out = {}
    for lineno, rec in iter_jsonl(path):
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise FormatError("missing string 'id'", lineno, "id")
        if not isinstance(rec.get("path"), str):
            raise FormatError("missing string 'path'", lineno, "path")
        if rec["id"] in out:
            raise FormatError(f"duplicate id {rec['id']!r}", lineno, "id")
        p = Path(rec["path"])
        out[rec["id"]] = p if p.is_absolute() else base / p
    return out


def write_hidden_set(hidden: dict[str, HiddenStates], directory, manifest_name="manifest.jsonl"):
    """Write one file per sample plus a manifest; returns the manifest path."""
    directory = Path(directory)
    records = []
    for i, (sid, h) in enumerate(hidden.items()):
        rel = f"h{i:06d}.bin"
        write_hidden(h, directory / rel)
        records.append({"id": sid, "path": rel})
    manifest = directory / manifest_name
    atomic_write(manifest, "".join(json.dumps(r) + "\n" for r in records))
    return manifest


def load_hidden_for(ids, manifest) -> dict[str, HiddenStates]:
    paths = read_manifest(manifest)
    missing = [i for i in ids if i not in paths]
    if missing:
        raise FormatError(f"no hidden states for sample {missing[0]!r}", None, "id")
    return {i: read_hidden(paths[i]) for i in ids}
