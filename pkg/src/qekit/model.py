"""Layer pooling with sparsemax weights, the sentence head and the word head."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from qekit.data import FormatError, atomic_write
from qekit.encoder import EncoderConfig, HiddenStates
from qekit.numerics import softmax_rows, sparsemax


@dataclass
class PoolingParams:
    lam: float
    phi: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return sparsemax(self.phi)


@dataclass
class SentenceHead:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h, 1)
    b2: float


@dataclass
class WordHead:
    W: np.ndarray  # (d, n_classes)
    b: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]


# fixed block order for flattening and checkpoints
BLOCKS = ("lam", "phi", "W1", "b1", "W2", "b2", "W", "b")


@dataclass
class ModelParams:
    pooling: PoolingParams
    sent: SentenceHead
    word: WordHead

    @property
    def d(self) -> int:
        return self.sent.W1.shape[0]

    @property
    def n_layers(self) -> int:
        return self.pooling.phi.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.sent.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.word.n_classes

    def blocks(self) -> dict[str, np.ndarray]:
        p, s, w = self.pooling, self.sent, self.word
        return {
            "lam": np.array([p.lam], dtype=np.float64),
            "phi": p.phi,
            "W1": s.W1,
            "b1": s.b1,
            "W2": s.W2,
            "b2": np.array([s.b2], dtype=np.float64),
            "W": w.W,
            "b": w.b,
        }

    @classmethod
    def from_blocks(cls, blocks) -> "ModelParams":
        return cls(
            PoolingParams(float(blocks["lam"][0]), np.array(blocks["phi"], dtype=np.float64)),
            SentenceHead(
                np.array(blocks["W1"], dtype=np.float64),
                np.array(blocks["b1"], dtype=np.float64),
                np.array(blocks["W2"], dtype=np.float64),
                float(blocks["b2"][0]),
            ),
            WordHead(np.array(blocks["W"], dtype=np.float64), np.array(blocks["b"], dtype=np.float64)),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.blocks().values()])

    def with_vector(self, vec) -> "ModelParams":
        """New params with this one's shapes and the values of ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for name, block in self.blocks().items():
            n = block.size
            out[name] = vec[pos : pos + n].reshape(block.shape)
            pos += n
        if pos != vec.size:
            raise ValueError(f"vector has {vec.size} entries, params need {pos}")
        return ModelParams.from_blocks(out)

    def copy(self) -> "ModelParams":
        return self.with_vector(self.to_vector())

    def zeros_like(self) -> "ModelParams":
        return self.with_vector(np.zeros(self.to_vector().size))


def _check_layers(n_layers, d, p: ModelParams):
    if n_layers != p.n_layers:
        raise ValueError(f"phi has {p.n_layers} entries, hidden states have {n_layers} layers")
    if d != p.d:
        raise ValueError(f"model expects hidden size {p.d}, hidden states have {d}")


def pool(layers: np.ndarray, p: PoolingParams) -> np.ndarray:
    """``lam * sum_l beta_l * layers[..., l, :, :]`` over the layer axis (-3)."""
    beta = sparsemax(p.phi)
    return p.lam * np.tensordot(beta, layers, axes=([0], [layers.ndim - 3]))


def layer_pool(h: HiddenStates, p: PoolingParams) -> np.ndarray:
    if h.n_layers != p.phi.shape[0]:
        raise ValueError(f"phi has {p.phi.shape[0]} entries, hidden states have {h.n_layers} layers")
    return pool(h.layers, p)


def sentence_head(x: np.ndarray, s: SentenceHead) -> np.ndarray:
    return (np.tanh(x @ s.W1 + s.b1) @ s.W2)[..., 0] + s.b2


def sentence_forward(params: ModelParams, h: HiddenStates) -> float:
    _check_layers(h.n_layers, h.d, params)
    cls_row = pool(h.layers[:, h.cls_index, :][:, None, :], params.pooling)[0]
    return float(sentence_head(cls_row, params.sent))


def word_forward(params: ModelParams, h: HiddenStates) -> np.ndarray:
    """Class probabilities for each target token, shape ``[n_target, n_classes]``."""
    _check_layers(h.n_layers, h.d, params)
    rows = pool(h.layers[:, h.target_index, :], params.pooling)
    return softmax_rows(rows @ params.word.W + params.word.b)


def init_params(cfg: EncoderConfig, n_classes: int = 2, h_hidden: int | None = None, seed: int = 0) -> ModelParams:
    if n_classes not in (2, 3):
        raise ValueError("n_classes must be 2 (OK/BAD) or 3 (OK/MINOR/MAJOR)")
    d = cfg.d
    h = h_hidden if h_hidden is not None else max(1, d // 2)
    rng = np.random.default_rng(seed)

    def unif(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        PoolingParams(1.0, np.zeros(cfg.L + 1)),
        SentenceHead(unif(d, (d, h)), unif(d, (h,)), unif(h, (h, 1)), float(unif(h, ()))),
        WordHead(unif(d, (d, n_classes)), unif(d, (n_classes,))),
    )


# ---------------------------------------------------------------------------
# checkpoints: JSON header line, then little-endian float64 blocks in BLOCKS order

CKPT_FORMAT = "qekit-checkpoint/1"


def save_checkpoint(params: ModelParams, path, meta: dict | None = None) -> None:
    blocks = params.blocks()
    header = {
        "format": CKPT_FORMAT,
        "d": params.d,
        "n_layers": params.n_layers,
        "hidden_size": params.hidden_size,
        "n_classes": params.n_classes,
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in blocks.items()],
        "meta": meta or {},
    }
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in blocks.values())
    atomic_write(path, json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + body)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("truncated checkpoint: no header line", 1)
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("checkpoint header is not valid JSON", 1) from None
    if header.get("format") != CKPT_FORMAT:
        raise FormatError(f"unknown checkpoint format {header.get('format')!r}", 1, "format")
    specs = header.get("blocks", [])
    if [b.get("name") for b in specs] != list(BLOCKS):
        raise FormatError("checkpoint blocks are missing or out of order", 1, "blocks")
    body = raw[nl + 1 :]
    need = sum(int(np.prod(b["shape"], dtype=np.int64)) for b in specs)
    if len(body) != 8 * need:
        raise FormatError(f"size mismatch: header needs {need} floats, body holds {len(body) / 8:g}", None, "blocks")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    blocks, pos = {}, 0
    for b in specs:
        n = int(np.prod(b["shape"], dtype=np.int64))
        blocks[b["name"]] = flat[pos : pos + n].reshape(b["shape"])
        pos += n
    params = ModelParams.from_blocks(blocks)
    for key, val in (("d", params.d), ("n_layers", params.n_layers), ("n_classes", params.n_classes)):
        if header.get(key) != val:
            raise FormatError(f"header says {header.get(key)}, blocks imply {val}", 1, key)
    return params, header.get("meta", {})


def with_pooling(params: ModelParams, lam=None, phi=None) -> ModelParams:
    pool_p = PoolingParams(
        params.pooling.lam if lam is None else float(lam),
        params.pooling.phi if phi is None else np.asarray(phi, dtype=np.float64),
    )
    return replace(params, pooling=pool_p)
