"""Multi-task loss, hand-derived gradients and the head training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from qekit import kernels
from qekit.data import Dataset, QESample, atomic_write, word_ranges
from qekit.encoder import EncoderConfig, HiddenStates
from qekit.metrics import UndefinedCorrelation, mcc, spearman
from qekit.model import ModelParams, init_params, sentence_head
from qekit.numerics import BOUNDARY_EPS, sparsemax, sparsemax_jvp, sparsemax_threshold

log = logging.getLogger(__name__)

BOUNDARY_STEP = 1e-7
BOUNDARY_RETRIES = 3


class ConfigError(ValueError):
    pass


class SparsemaxBoundaryError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda_sl: float = 1.0
    lambda_wl: float = 1.0
    class_weights: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        if self.lambda_sl < 0 or self.lambda_wl < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lambda_sl + self.lambda_wl <= 0:
            raise ConfigError("at least one of lambda_sl, lambda_wl must be positive")
        if len(self.class_weights) not in (2, 3) or min(self.class_weights) <= 0:
            raise ConfigError("class_weights needs 2 or 3 positive entries")

    @property
    def n_classes(self) -> int:
        return len(self.class_weights)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_size: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("learning_rate, batch_size and patience must be positive")
        if self.patience > max(self.max_epochs, 1):
            raise ConfigError("patience cannot exceed max_epochs")


# ---------------------------------------------------------------------------
# losses


def loss_sentence(y: float, y_hat: float) -> float:
    return 0.5 * (y - y_hat) ** 2


def loss_word(tags: Sequence[int], probs, w: Sequence[float]) -> float:
    """Weighted mean negative log-likelihood of the gold classes."""
    probs = np.asarray(probs, dtype=np.float64)
    tags = [int(t) for t in tags]
    if not tags or len(tags) != len(probs):
        raise ValueError(f"need equal nonzero counts of tags and distributions, got {len(tags)}/{len(probs)}")
    total = 0.0
    for t, p in zip(tags, probs):
        if p[t] <= 0.0:
            raise FloatingPointError(f"zero probability at gold class {t}")
        total += w[t] * math.log(p[t])
    return -total / len(tags)


def loss_combined(ls: float, lw: float, cfg: LossConfig) -> float:
    return cfg.lambda_sl * ls + cfg.lambda_wl * lw


# ---------------------------------------------------------------------------
# batched features: the encoder is frozen, so only the [cls] rows and target
# rows of each sample's hidden states are ever needed.


def token_classes(sample: QESample, n_classes: int) -> np.ndarray | None:
    """Gold class per target word; None if the sample lacks that supervision."""
    if n_classes == 2:
        if sample.tags is None:
            return None
        return np.array([int(t) for t in sample.tags], dtype=np.int64)
    if sample.spans is None:
        return None
    out = np.zeros(sample.n_words, dtype=np.int64)
    for i, (a, b) in enumerate(word_ranges(sample.mt)):
        for sp in sample.spans:
            if sp.start < b and a < sp.end:
                out[i] = max(out[i], int(sp.severity))
    return out


@dataclass
class Batch:
    ids: list[str]
    cls: np.ndarray  # [L+1, B, d]
    tok: np.ndarray  # [L+1, Ntok, d]
    offsets: np.ndarray  # [B+1] token offsets per sample
    y: np.ndarray  # [B], nan where no gold score
    tok_class: np.ndarray  # [Ntok], -1 where no gold class
    samples: list[QESample] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def tok_sample(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.offsets))

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        tok_idx = np.concatenate(
            [np.arange(self.offsets[i], self.offsets[i + 1]) for i in idx]
        ) if idx.size else np.zeros(0, dtype=np.int64)
        counts = np.diff(self.offsets)[idx]
        return Batch(
            [self.ids[i] for i in idx],
            self.cls[:, idx, :],
            self.tok[:, tok_idx, :],
            np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            self.y[idx],
            self.tok_class[tok_idx],
            [self.samples[i] for i in idx] if self.samples else [],
        )


def make_batch(samples: Sequence[QESample], hidden: Mapping[str, HiddenStates], n_classes: int = 2) -> Batch:
    cls_rows, tok_rows, counts, ys, classes = [], [], [], [], []
    for s in samples:
        h = hidden[s.id]
        ti = h.target_index
        if ti.size != s.n_words:
            raise ValueError(f"sample {s.id}: {ti.size} target tokens but {s.n_words} words")
        cls_rows.append(h.layers[:, h.cls_index, :])
        tok_rows.append(h.layers[:, ti, :])
        counts.append(ti.size)
        ys.append(np.nan if s.score is None else s.score)
        c = token_classes(s, n_classes)
        classes.append(np.full(ti.size, -1, dtype=np.int64) if c is None else c)
    if not samples:
        raise ValueError("cannot build an empty batch")
    return Batch(
        [s.id for s in samples],
        np.stack(cls_rows, axis=1),
        np.concatenate(tok_rows, axis=1),
        np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        np.array(ys, dtype=np.float64),
        np.concatenate(classes),
        list(samples),
    )


# ---------------------------------------------------------------------------
# forward / backward


def forward(params: ModelParams, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Raw sentence scores ``[B]`` and token class probabilities ``[Ntok, C]``."""
    beta = sparsemax(params.pooling.phi)
    lam = params.pooling.lam
    xc = lam * np.tensordot(beta, batch.cls, axes=1)
    xt = lam * np.tensordot(beta, batch.tok, axes=1)
    logits = xt @ params.word.W + params.word.b
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return sentence_head(xc, params.sent), e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(params: ModelParams, batch: Batch, cfg: LossConfig):
    phi = params.pooling.phi
    lam = params.pooling.lam
    beta = sparsemax(phi)
    g = params.zeros_like()
    dbeta = np.zeros_like(beta)
    dlam = 0.0
    loss = 0.0
    B = batch.n

    if cfg.lambda_sl > 0:
        s = params.sent
        mc = np.tensordot(beta, batch.cls, axes=1)  # [B, d]
        x = lam * mc
        a = np.tanh(x @ s.W1 + s.b1)
        y_hat = a @ s.W2[:, 0] + s.b2
        r = y_hat - batch.y
        loss += cfg.lambda_sl * float(np.mean(0.5 * r * r))
        dy = cfg.lambda_sl * r / B
        g.sent.W2 = a.T @ dy[:, None]
        g.sent.b2 = float(dy.sum())
        dz = dy[:, None] * s.W2[:, 0][None, :] * (1.0 - a * a)
        g.sent.W1 = x.T @ dz
        g.sent.b1 = dz.sum(axis=0)
        dx = dz @ s.W1.T
        dlam += float(np.sum(dx * mc))
        dbeta += lam * np.einsum("bd,lbd->l", dx, batch.cls)

    if cfg.lambda_wl > 0:
        w = params.word
        mt = np.tensordot(beta, batch.tok, axes=1)  # [Ntok, d]
        xt = lam * mt
        logits = xt @ w.W + w.b
        n_per = np.diff(batch.offsets).astype(np.float64)
        cw = np.asarray(cfg.class_weights)
        coef = cfg.lambda_wl * cw[batch.tok_class] / (B * n_per[batch.tok_sample])
        _, lsum, dlog = kernels.softmax_xent(logits, batch.tok_class, coef)
        loss += float(lsum)
        g.word.W = xt.T @ dlog
        g.word.b = dlog.sum(axis=0)
        dxt = dlog @ w.W.T
        dlam += float(np.sum(dxt * mt))
        dbeta += lam * np.einsum("td,ltd->l", dxt, batch.tok)

    dphi, at_boundary = sparsemax_jvp(phi, dbeta)
    g.pooling.lam = dlam
    g.pooling.phi = dphi
    return loss, g, at_boundary


def _boundary_coords(phi: np.ndarray) -> np.ndarray:
    tau, _ = sparsemax_threshold(phi)
    gap = phi - tau
    return (gap <= 0.0) & (gap > -BOUNDARY_EPS)


def _check_supervision(batch: Batch, cfg: LossConfig):
    if cfg.lambda_sl > 0 and np.any(np.isnan(batch.y)):
        raise ConfigError("lambda_sl > 0 but some samples have no gold score")
    if cfg.lambda_wl > 0 and np.any(batch.tok_class < 0):
        raise ConfigError("lambda_wl > 0 but some samples have no gold word labels")
    if cfg.lambda_wl > 0 and batch.tok_class.size and batch.tok_class.max() >= cfg.n_classes:
        raise ConfigError("gold word labels exceed the number of class weights")


def loss_and_grad(params: ModelParams, batch: Batch, cfg: LossConfig) -> tuple[float, ModelParams]:
    """Mean batch loss and its gradient.

    At a sparsemax kink the pooling logits are nudged away from the boundary
    (at most ``BOUNDARY_RETRIES`` times) and the gradient is taken there.
    """
    _check_supervision(batch, cfg)
    if params.n_classes != cfg.n_classes:
        raise ConfigError(f"model has {params.n_classes} classes, loss has {cfg.n_classes} weights")
    p = params
    for attempt in range(BOUNDARY_RETRIES + 1):
        loss, g, at_boundary = _loss_and_grad(p, batch, cfg)
        if not at_boundary:
            return loss, g
        if attempt == BOUNDARY_RETRIES:
            break
        phi = p.pooling.phi.copy()
        phi[_boundary_coords(phi)] -= BOUNDARY_STEP
        p = p.copy()
        p.pooling.phi = phi
    raise SparsemaxBoundaryError("pooling logits remain on a sparsemax kink after perturbation")


def grad(params: ModelParams, batch: Batch, cfg: LossConfig) -> ModelParams:
    return loss_and_grad(params, batch, cfg)[1]


def batch_loss(params: ModelParams, batch: Batch, cfg: LossConfig) -> float:
    _check_supervision(batch, cfg)
    scores, probs = forward(params, batch)
    ls = lw = 0.0
    if cfg.lambda_sl > 0:
        ls = float(np.mean(0.5 * (batch.y - scores) ** 2))
    if cfg.lambda_wl > 0:
        lw = float(
            np.mean(
                [
                    loss_word(batch.tok_class[a:b], probs[a:b], cfg.class_weights)
                    for a, b in zip(batch.offsets[:-1], batch.offsets[1:])
                ]
            )
        )
    return loss_combined(ls, lw, cfg)


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, size: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# training loop


def predict_tags(probs: np.ndarray) -> np.ndarray:
    """1 (BAD, or any error severity) where the argmax class is not OK."""
    return (np.argmax(probs, axis=1) != 0).astype(np.int64)


def dev_objective(params: ModelParams, batch: Batch, cfg: LossConfig) -> float | None:
    scores, probs = forward(params, batch)
    parts = []
    if cfg.lambda_sl > 0:
        try:
            parts.append(spearman(scores, batch.y))
        except UndefinedCorrelation:
            return None
    if cfg.lambda_wl > 0:
        parts.append(mcc(predict_tags(probs), (batch.tok_class != 0).astype(np.int64)))
    return float(np.mean(parts))


def check_supervision(dataset: Dataset, cfg: LossConfig, name="train") -> None:
    for s in dataset:
        if cfg.lambda_sl > 0 and s.score is None:
            raise ConfigError(f"{name} sample {s.id} has no 'score' but lambda_sl > 0")
        if cfg.lambda_wl > 0:
            need = "tags" if cfg.n_classes == 2 else "spans"
            if getattr(s, need) is None:
                raise ConfigError(f"{name} sample {s.id} has no '{need}' but lambda_wl > 0")


def train(
    train_set: Dataset,
    dev_set: Dataset | None,
    hidden_source: Mapping[str, HiddenStates],
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    init: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Train the heads with Adam; return the best-on-dev params and the history."""
    check_supervision(train_set, loss_cfg, "train")
    if dev_set is not None and len(dev_set):
        check_supervision(dev_set, loss_cfg, "dev")
    if len(train_set) == 0:
        raise ConfigError("training set is empty")

    tr = make_batch(list(train_set), hidden_source, loss_cfg.n_classes)
    dv = make_batch(list(dev_set), hidden_source, loss_cfg.n_classes) if dev_set is not None and len(dev_set) else None
    if init is None:
        L1, _, d = tr.cls.shape
        init = init_params(EncoderConfig(d=d, L=L1 - 1), loss_cfg.n_classes, train_cfg.hidden_size, train_cfg.seed)
    params = init.copy()
    if train_cfg.max_epochs == 0:
        return params, []

    rng = np.random.default_rng(train_cfg.seed)
    opt = Adam(params.to_vector().size, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    history: list[dict] = []
    best, best_obj, best_epoch, stale = params.copy(), -math.inf, 0, 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = rng.permutation(tr.n)
        losses = []
        for lo in range(0, tr.n, train_cfg.batch_size):
            mb = tr.subset(perm[lo : lo + train_cfg.batch_size])
            loss, g = loss_and_grad(params, mb, loss_cfg)
            params = params.with_vector(opt.step(params.to_vector(), g.to_vector()))
            losses.append(loss)
        train_loss = float(np.mean(losses))
        obj = dev_objective(params, dv, loss_cfg) if dv is not None else None
        history.append({"epoch": epoch, "train_loss": train_loss, "dev_objective": obj, "selected": False})
        log.info("epoch %d train_loss %.6f dev %s", epoch, train_loss, obj)
        score = -math.inf if obj is None else obj
        if dv is None or score > best_obj:
            best, best_obj, best_epoch, stale = params.copy(), score, epoch, 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    for rec in history:
        rec["selected"] = rec["epoch"] == best_epoch
    return best, history


def write_history(history: list[dict], path) -> None:
    atomic_write(path, "".join(json.dumps(r) + "\n" for r in history))
