"""Synthetic QE corpus with known ground truth.

Gold labels are functions of the toy encoder's hidden states under a secret
layer mix, so the head family in :mod:`qekit.model` can represent them
exactly:

* sentence score: ``sigmoid(gain * z_cls)`` where ``z_cls`` is a standardised
  projection of the mixed ``[cls]`` row;
* word tag: BAD iff the standardised projection of the mixed token row
  exceeds ``BAD_Z``; tokens above ``MAJOR_Z`` are MAJOR errors, the rest MINOR.

Standardisation statistics come from a fixed-size calibration draw, so labels
do not depend on ``n_samples``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qekit.data import Dataset, QESample, WordTag, word_ranges
from qekit.encoder import EncoderConfig, HiddenStates, encode_toy
from qekit.numerics import sparsemax
from qekit.span import labels_to_spans

# frozen after measuring the token OK rate on 1,000 samples (~0.76 at seed 1)
BAD_Z = 0.8
MAJOR_Z = 1.5
SCORE_GAIN = 1.5
CALIBRATION_SAMPLES = 256
LANGUAGE_PAIRS = ("en-de", "en-mr", "zh-en")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


@dataclass(frozen=True)
class SynthSecret:
    phi: np.ndarray  # pooling logits of the secret mix
    lam: float
    sent_dir: np.ndarray
    sent_mean: float
    sent_std: float
    word_dir: np.ndarray
    word_mean: float
    word_std: float

    @property
    def beta(self) -> np.ndarray:
        return sparsemax(self.phi)

    def mix(self, layers: np.ndarray) -> np.ndarray:
        return self.lam * np.tensordot(self.beta, layers, axes=1)

    def sentence_z(self, h: HiddenStates) -> float:
        return float((self.mix(h.layers[:, h.cls_index, :]) @ self.sent_dir - self.sent_mean) / self.sent_std)

    def word_z(self, h: HiddenStates) -> np.ndarray:
        return (self.mix(h.layers[:, h.target_index, :]) @ self.word_dir - self.word_mean) / self.word_std


def _vocabulary(rng: np.random.Generator, size: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n_syll = int(rng.integers(1, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _sentence(rng, vocab, max_len) -> str:
    n = int(rng.integers(1, max_len + 1))
    return " ".join(vocab[i] for i in rng.integers(len(vocab), size=n))


def _texts(rng, src_vocab, tgt_vocab, max_len):
    return _sentence(rng, src_vocab, max_len), _sentence(rng, tgt_vocab, max_len)


def synth_generate(
    n_samples: int,
    vocab_size: int = 500,
    max_len: int = 12,
    seed: int = 0,
    enc: EncoderConfig | None = None,
    split: str = "train",
) -> tuple[Dataset, dict[str, HiddenStates], SynthSecret]:
    """Generate ``n_samples`` labelled samples and their hidden states."""
    if n_samples < 0 or vocab_size < 1 or max_len < 1:
        raise ValueError("n_samples must be >= 0; vocab_size and max_len must be positive")
    enc = enc or EncoderConfig(d=32, L=4, seed=seed)
    root = np.random.SeedSequence(seed)
    vocab_ss, secret_ss, calib_ss, data_ss = root.spawn(4)
    vrng = np.random.default_rng(vocab_ss)
    src_vocab = _vocabulary(vrng, vocab_size)
    tgt_vocab = _vocabulary(vrng, vocab_size)

    srng = np.random.default_rng(secret_ss)
    phi = srng.normal(0.0, 1.0, size=enc.L + 1)
    # the embedding layer carries no context, so keep it out of the secret mix
    phi[0] -= 3.0
    sent_dir = srng.normal(size=enc.d)
    word_dir = srng.normal(size=enc.d)
    sent_dir /= np.linalg.norm(sent_dir)
    word_dir /= np.linalg.norm(word_dir)

    beta = sparsemax(phi)
    crng = np.random.default_rng(calib_ss)
    cls_proj, tok_proj = [], []
    for k in range(CALIBRATION_SAMPLES):
        src, mt = _texts(crng, src_vocab, tgt_vocab, max_len)
        h = encode_toy(QESample(f"calib-{k}", "xx-xx", src, mt), enc)
        mixed = np.tensordot(beta, h.layers, axes=1)
        cls_proj.append(mixed[h.cls_index] @ sent_dir)
        tok_proj.extend(mixed[h.target_index] @ word_dir)
    secret = SynthSecret(
        phi, 1.0,
        sent_dir, float(np.mean(cls_proj)), float(np.std(cls_proj)),
        word_dir, float(np.mean(tok_proj)), float(np.std(tok_proj)),
    )

    drng = np.random.default_rng(data_ss)
    samples, hidden = [], {}
    for i in range(n_samples):
        lp = LANGUAGE_PAIRS[int(drng.integers(len(LANGUAGE_PAIRS)))]
        src, mt = _texts(drng, src_vocab, tgt_vocab, max_len)
        sid = f"synth{seed}-{i:06d}"
        h = encode_toy(QESample(sid, lp, src, mt), enc)
        score = 1.0 / (1.0 + np.exp(-SCORE_GAIN * secret.sentence_z(h)))
        z = secret.word_z(h)
        labels = np.where(z > MAJOR_Z, 2, np.where(z > BAD_Z, 1, 0))
        tags = tuple(WordTag.BAD if lab else WordTag.OK for lab in labels)
        spans = tuple(labels_to_spans(labels, word_ranges(mt)))
        samples.append(QESample(sid, lp, src, mt, float(score), tags, spans))
        hidden[sid] = h
    return Dataset(tuple(samples), split), hidden, secret


def split_dataset(ds: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    return Dataset(ds.samples[:n_train], "train"), Dataset(ds.samples[n_train:], "dev")
