"""Independent reference implementations the tests compare against.

Nothing here calls into qekit's numerical code paths except where noted;
the oracles are deliberately naive (enumeration, pair counting, loops).
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from qekit.data import ErrorSpan, QESample, Severity, WordTag, word_ranges
from qekit.encoder import EncoderConfig, encode_toy
from qekit.model import ModelParams, sentence_forward, word_forward

# ---------------------------------------------------------------------------
# simplex projection by support enumeration

_SUPPORTS: dict[int, np.ndarray] = {}


def _supports(n: int) -> np.ndarray:
    if n not in _SUPPORTS:
        rows = [m for k in range(1, n + 1) for m in itertools.combinations(range(n), k)]
        mask = np.zeros((len(rows), n), dtype=bool)
        for r, idx in enumerate(rows):
            mask[r, list(idx)] = True
        _SUPPORTS[n] = mask
    return _SUPPORTS[n]


def simplex_projection(z) -> np.ndarray:
    """Closest simplex point to ``z``, found by trying every support set.

    For each support S the projection onto the affine hull of that face is
    ``z_S - (sum z_S - 1) / |S|``; the answer is the nearest candidate that
    is nonnegative.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = _supports(z.size)
    k = mask.sum(axis=1)
    tau = ((mask * z).sum(axis=1) - 1.0) / k
    cand = np.where(mask, z[None, :] - tau[:, None], 0.0)
    feasible = np.all(cand >= -1e-15, axis=1)
    dist = np.where(feasible, ((cand - z) ** 2).sum(axis=1), np.inf)
    return np.maximum(cand[np.argmin(dist)], 0.0)


# ---------------------------------------------------------------------------
# correlations and classification counts


def count_ranks(x) -> list[float]:
    """rank_i = 1 + #smaller + (#equal others) / 2."""
    x = list(map(float, x))
    out = []
    for i, xi in enumerate(x):
        less = sum(1 for j, xj in enumerate(x) if xj < xi)
        ties = sum(1 for j, xj in enumerate(x) if j != i and xj == xi)
        out.append(1.0 + less + ties / 2.0)
    return out


def pearson_bf(x, y) -> float:
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def spearman_bf(x, y) -> float:
    return pearson_bf(count_ranks(x), count_ranks(y))


def kendall_bf(x, y) -> float:
    """tau-b from explicit pair enumeration."""
    x, y = [float(v) for v in x], [float(v) for v in y]
    conc = disc = tx = ty = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx == dy:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def mcc_bf(pred, gold) -> float:
    tp = tn = fp = fn = 0
    for p, g in zip(pred, gold):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)


# ---------------------------------------------------------------------------
# training fixtures

_WORDS = ("ka", "lo", "mi", "sen", "tar", "vu", "zel", "po", "rin", "dax")


def random_text(rng, max_words=5) -> str:
    n = int(rng.integers(1, max_words + 1))
    return " ".join(_WORDS[i] for i in rng.integers(len(_WORDS), size=n))


def random_samples(rng, n, n_classes=2, d=8, L=2, enc_seed=0):
    """Random samples with every kind of supervision, plus their hidden states."""
    enc = EncoderConfig(d=d, L=L, seed=enc_seed)
    samples, hidden = [], {}
    for i in range(n):
        mt = random_text(rng)
        ranges = word_ranges(mt)
        labels = rng.integers(0, 3, size=len(ranges))
        spans = []
        for lab, (a, b) in zip(labels, ranges):
            if lab:
                spans.append(ErrorSpan(a, b, Severity(int(lab))))
        tags = [WordTag.BAD if lab else WordTag.OK for lab in labels]
        s = QESample(f"s{i}", "xx-yy", random_text(rng), mt, float(rng.uniform()), tuple(tags), tuple(spans))
        samples.append(s)
        hidden[s.id] = encode_toy(s, enc)
    return samples, hidden


def oracle_loss(params: ModelParams, samples, hidden, lambda_sl, lambda_wl, class_weights) -> float:
    """Mean combined loss, evaluated sample by sample through the model's forward functions."""
    total = []
    for s in samples:
        h = hidden[s.id]
        ls = 0.5 * (s.score - sentence_forward(params, h)) ** 2
        probs = word_forward(params, h)
        if params.n_classes == 2:
            gold = [int(t) for t in s.tags]
        else:
            gold = [0] * len(probs)
            for i, (a, b) in enumerate(word_ranges(s.mt)):
                for sp in s.spans:
                    if sp.start < b and a < sp.end:
                        gold[i] = max(gold[i], int(sp.severity))
        lw = -sum(class_weights[g] * math.log(p[g]) for g, p in zip(gold, probs)) / len(gold)
        total.append(lambda_sl * ls + lambda_wl * lw)
    return math.fsum(total) / len(total)


LOSS_MODES = ("sentence", "word", "mixed")


def gradient_check_draw(k: int, h: float = 1e-5) -> tuple[str, float]:
    """One random (theta, batch, lambdas, class weights) draw.

    Returns the loss mode and the relative error
    ``max|analytic - fd| / max(max|analytic|, max|fd|)`` over all parameters.
    Pooling logits are redrawn until no entry is within 1e-3 of the sparsemax
    threshold, so the +-h probes never straddle a kink.
    """
    from qekit.model import init_params
    from qekit.numerics import finite_diff_grad, sparsemax_threshold
    from qekit.training import LossConfig, grad, make_batch

    rng = np.random.default_rng(1000 + k)
    n_classes = int(rng.choice([2, 3]))
    d, L = int(rng.choice([4, 6, 8])), int(rng.choice([1, 2, 3]))
    samples, hidden = random_samples(rng, int(rng.integers(1, 5)), n_classes, d, L, enc_seed=k)
    params = init_params(EncoderConfig(d, L), n_classes, int(rng.integers(1, 6)), seed=k)
    while True:
        phi = rng.normal(0.0, 1.0, L + 1)
        tau, _ = sparsemax_threshold(phi)
        if np.min(np.abs(phi - tau)) > 1e-3:
            break
    params.pooling.phi = phi
    params.pooling.lam = float(rng.uniform(0.5, 2.0))
    mode = LOSS_MODES[k % 3]
    lsl, lwl = {"sentence": (1.0, 0.0), "word": (0.0, 1.0)}.get(
        mode, (float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 2.0)))
    )
    cw = tuple(float(x) for x in rng.uniform(0.2, 3.0, size=n_classes))
    cfg = LossConfig(lsl, lwl, cw)

    analytic = grad(params, make_batch(samples, hidden, n_classes), cfg).to_vector()
    fd = finite_diff_grad(
        lambda v: oracle_loss(params.with_vector(v), samples, hidden, lsl, lwl, cw), params.to_vector(), h
    )
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)))
    return mode, float(np.max(np.abs(analytic - fd)) / scale)
