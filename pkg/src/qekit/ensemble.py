"""Per-language-pair ensembling of sentence scores and word tags.

Weights are found by seeded random search followed by coordinate descent.
The candidate pool always contains every single model (one-hot weights), so
the returned objective is never below the best single model on the same data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from qekit.data import atomic_write
from qekit.metrics import UndefinedCorrelation, mcc, spearman

ALPHA_MIN, ALPHA_MAX = 0.25, 4.0
BAD_THRESHOLD = 0.5
REFINE_SWEEPS = 20
REFINE_STEP = 0.25
REFINE_SHRINK = 0.75

# model id -> sample id -> score (sentence level) or 0/1 tag list (word level)
PredictionSet = Mapping[str, Mapping[str, object]]


@dataclass(frozen=True)
class EnsembleWeights:
    models: tuple[str, ...]
    w: tuple[float, ...]
    alpha: float = 1.0
    objective: float | None = None
    budget: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))
        if len(self.models) != len(self.w):
            raise ValueError(f"{len(self.w)} weights for {len(self.models)} models")
        if any(x < 0 for x in self.w) or abs(math.fsum(self.w) - 1.0) > 1e-12:
            raise ValueError("model weights must be nonnegative and sum to 1")
        if not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise ValueError(f"alpha {self.alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")

    def to_json(self) -> dict:
        d = asdict(self)
        d["models"], d["w"] = list(self.models), list(self.w)
        return d

    @classmethod
    def from_json(cls, rec: dict) -> "EnsembleWeights":
        return cls(rec["models"], rec["w"], rec.get("alpha", 1.0), rec.get("objective"), rec.get("budget", 0), rec.get("seed", 0))


def _normalize(w: np.ndarray) -> np.ndarray:
    w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
    w = w / w.sum()
    # push the rounding residue onto the largest weight so the sum is 1 to 1e-12
    w[np.argmax(w)] += 1.0 - math.fsum(w)
    return w


def _models_and_ids(preds: PredictionSet, models=None) -> tuple[list[str], list[str]]:
    models = list(preds) if models is None else list(models)
    if not models:
        raise ValueError("empty prediction set")
    missing = [m for m in models if m not in preds]
    if missing:
        raise ValueError(f"no predictions for model {missing[0]!r}")
    ids = list(preds[models[0]])
    for m in models[1:]:
        if set(preds[m]) != set(ids):
            raise ValueError(f"model {m!r} covers different sample ids than {models[0]!r}")
    return models, ids


def stack_scores(preds: PredictionSet, models=None) -> tuple[list[str], list[str], np.ndarray]:
    models, ids = _models_and_ids(preds, models)
    mat = np.array([[float(preds[m][i]) for i in ids] for m in models], dtype=np.float64)
    return models, ids, mat


def stack_tags(preds: PredictionSet, models=None) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    """Returns models, ids, a ``[M, Ntok]`` 0/1 matrix and the per-sample token offsets."""
    models, ids = _models_and_ids(preds, models)
    lengths = [len(preds[models[0]][i]) for i in ids]
    rows = []
    for m in models:
        row = []
        for i, n in zip(ids, lengths):
            tags = list(preds[m][i])
            if len(tags) != n:
                raise ValueError(f"model {m!r} has {len(tags)} tags for sample {i!r}, expected {n}")
            row.extend(int(t) for t in tags)
        rows.append(row)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return models, ids, np.array(rows, dtype=np.int64).reshape(len(models), -1), offsets


def _weights_vector(w, models) -> np.ndarray:
    if isinstance(w, EnsembleWeights):
        if list(w.models) != list(models):
            raise ValueError(f"weights are for models {list(w.models)}, predictions have {list(models)}")
        w = w.w
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (len(models),):
        raise ValueError(f"{w.size} weights for {len(models)} models")
    return w


def combine_sentence(preds: PredictionSet, w, models=None) -> dict[str, float]:
    if isinstance(w, EnsembleWeights) and models is None:
        models = w.models
    models, ids, mat = stack_scores(preds, models)
    out = _weights_vector(w, models) @ mat
    return dict(zip(ids, out.tolist()))


def _tag_decision(wc: np.ndarray, alpha: float, threshold: float) -> np.ndarray:
    return (alpha * wc >= threshold).astype(np.int64)


def combine_tags(preds: PredictionSet, w, alpha=None, threshold: float = BAD_THRESHOLD, models=None) -> dict[str, list[int]]:
    """Per token, BAD (1) iff ``alpha * sum_i w_i * c_i >= threshold``."""
    if isinstance(w, EnsembleWeights):
        models = w.models if models is None else models
        alpha = w.alpha if alpha is None else alpha
    alpha = 1.0 if alpha is None else float(alpha)
    models, ids, mat, offsets = stack_tags(preds, models)
    tags = _tag_decision(_weights_vector(w, models) @ mat, alpha, threshold)
    return {i: tags[offsets[k] : offsets[k + 1]].tolist() for k, i in enumerate(ids)}


# ---------------------------------------------------------------------------
# search


def _gold_vector(gold: Mapping[str, object], ids: Sequence[str], objective: str, offsets=None) -> np.ndarray:
    missing = [i for i in ids if i not in gold or gold[i] is None]
    if missing:
        raise ValueError(f"no gold label for sample {missing[0]!r}")
    if objective == "spearman":
        g = np.array([float(gold[i]) for i in ids])
        if g.size < 2 or np.all(g == g[0]):
            raise ValueError("gold scores are constant; spearman is undefined")
        return g
    g = np.concatenate([np.asarray([int(t) for t in gold[i]], dtype=np.int64) for i in ids])
    if offsets is not None and g.size != offsets[-1]:
        raise ValueError("gold tag counts do not match the predictions")
    if g.size == 0 or np.all(g == g[0]):
        raise ValueError("gold tags contain a single class; mcc is degenerate")
    return g


def search_weights(
    dev_preds: PredictionSet,
    gold: Mapping[str, object],
    objective: str = "spearman",
    budget: int = 200,
    seed: int = 0,
    threshold: float = BAD_THRESHOLD,
    models=None,
) -> EnsembleWeights:
    """Find model weights (and the BAD weight alpha, for tags) maximising the dev objective."""
    if objective not in ("spearman", "mcc"):
        raise ValueError(f"unknown objective {objective!r}")
    word = objective == "mcc"
    if word:
        models, ids, mat, offsets = stack_tags(dev_preds, models)
        g = _gold_vector(gold, ids, objective, offsets)
    else:
        models, ids, mat = stack_scores(dev_preds, models)
        g = _gold_vector(gold, ids, objective)
    M = len(models)
    if budget < M:
        raise ValueError(f"budget {budget} is smaller than the number of models {M}")

    def score(w, alpha):
        combo = w @ mat
        if word:
            return mcc(_tag_decision(combo, alpha, threshold), g)
        try:
            return spearman(combo, g)
        except UndefinedCorrelation:
            return -math.inf

    rng = np.random.default_rng(seed)
    candidates = [(np.eye(M)[i], 1.0) for i in range(M)]
    for _ in range(budget):
        w = _normalize(rng.dirichlet(np.ones(M)))
        alpha = float(np.exp(rng.uniform(math.log(ALPHA_MIN), math.log(ALPHA_MAX)))) if word else 1.0
        candidates.append((w, alpha))
    # first maximum wins, so ties resolve to the lowest candidate index
    scores = [score(w, a) for w, a in candidates]
    k = int(np.argmax(scores))
    best_w, best_a, best = candidates[k][0], candidates[k][1], scores[k]

    if M > 1 or word:
        step = REFINE_STEP
        for _ in range(REFINE_SWEEPS):
            moves = []
            if M > 1:
                for i in range(M):
                    for sign in (1.0, -1.0):
                        moves.append(("w", i, sign))
            if word:
                moves += [("a", 0, 1.0), ("a", 0, -1.0)]
            for kind, i, sign in moves:
                w, a = best_w, best_a
                if kind == "w":
                    trial = best_w.copy()
                    trial[i] += sign * step
                    if np.maximum(trial, 0.0).sum() <= 0.0:
                        continue
                    w = _normalize(trial)
                else:
                    a = float(np.clip(best_a * math.exp(sign * step), ALPHA_MIN, ALPHA_MAX))
                s = score(w, a)
                if s > best:
                    best_w, best_a, best = w, a, s
            step *= REFINE_SHRINK

    return EnsembleWeights(tuple(models), tuple(best_w.tolist()), best_a, float(best), budget, seed)


def search_by_lp(
    dev_preds: PredictionSet,
    gold: Mapping[str, object],
    lp_of: Mapping[str, str],
    objective: str = "spearman",
    budget: int = 200,
    seed: int = 0,
    threshold: float = BAD_THRESHOLD,
) -> dict[str, EnsembleWeights]:
    """Independent weight search for every language pair."""
    models = list(dev_preds)
    ids = list(dev_preds[models[0]]) if models else []
    by_lp: dict[str, list[str]] = {}
    for i in ids:
        by_lp.setdefault(lp_of[i], []).append(i)
    out = {}
    for lp in sorted(by_lp):
        keep = by_lp[lp]
        sub = {m: {i: dev_preds[m][i] for i in keep} for m in models}
        out[lp] = search_weights(sub, gold, objective, budget, seed, threshold)
    return out


def write_weights(weights: Mapping[str, EnsembleWeights], path) -> None:
    atomic_write(path, json.dumps({lp: w.to_json() for lp, w in weights.items()}, indent=2, sort_keys=True) + "\n")


def read_weights(path) -> dict[str, EnsembleWeights]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {lp: EnsembleWeights.from_json(rec) for lp, rec in raw.items()}
