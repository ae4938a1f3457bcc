"""Hot inner loops, each in two flavours.

``_nb_*`` functions are explicit loops compiled by numba; ``_np_*`` functions
are vectorised numpy. The public names are bound to one or the other by
:mod:`qekit._jit` (``QEKIT_DISABLE_JIT=1`` forces numpy). Both flavours are
kept importable so the test suite and the benchmark can compare them.
"""

from __future__ import annotations

import numpy as np

from qekit._jit import njit, select

# ---------------------------------------------------------------------------
# sparsemax threshold


@njit
def _nb_sparsemax_threshold(z):
    n = z.shape[0]
    zs = np.sort(z)[::-1]
    csum = 0.0
    k = 0
    ksum = 0.0
    for j in range(n):
        csum += zs[j]
        if 1.0 + (j + 1) * zs[j] > csum:
            k = j + 1
            ksum = csum
    return (ksum - 1.0) / k, k


def _np_sparsemax_threshold(z):
    zs = np.sort(z)[::-1]
    csum = np.cumsum(zs)
    ks = np.arange(1, z.shape[0] + 1)
    k = int(np.nonzero(1.0 + ks * zs > csum)[0][-1]) + 1
    return (csum[k - 1] - 1.0) / k, k


# ---------------------------------------------------------------------------
# ranks with ties averaged (1-based)


@njit
def _nb_average_ranks(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def _np_average_ranks(x):
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg = upper - 0.5 * (counts - 1)
    return avg[inv].astype(np.float64)


# ---------------------------------------------------------------------------
# Kendall pair counts: (concordant - discordant, pairs untied in x, untied in y)


@njit
def _nb_kendall_counts(x, y):
    n = x.shape[0]
    s = 0
    nx = 0
    ny = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx != 0.0:
                nx += 1
            if dy != 0.0:
                ny += 1
            prod = dx * dy
            if prod > 0.0:
                s += 1
            elif prod < 0.0:
                s -= 1
    return s, nx, ny


def _np_kendall_counts(x, y, chunk=512):
    n = x.shape[0]
    s = nx = ny = 0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        sx = np.sign(x[lo:hi, None] - x[None, :])
        sy = np.sign(y[lo:hi, None] - y[None, :])
        # keep only pairs (i, j) with j > i
        upper = np.arange(lo, hi)[:, None] < np.arange(n)[None, :]
        s += int(np.sum((sx * sy)[upper]))
        nx += int(np.count_nonzero(sx[upper]))
        ny += int(np.count_nonzero(sy[upper]))
    return s, nx, ny


# ---------------------------------------------------------------------------
# binary confusion counts, positive class = 1 (BAD)


@njit
def _nb_confusion(pred, gold):
    tp = tn = fp = fn = 0
    for i in range(pred.shape[0]):
        if pred[i] == 1:
            if gold[i] == 1:
                tp += 1
            else:
                fp += 1
        else:
            if gold[i] == 1:
                fn += 1
            else:
                tn += 1
    return tp, tn, fp, fn


def _np_confusion(pred, gold):
    p = pred == 1
    g = gold == 1
    return (
        int(np.count_nonzero(p & g)),
        int(np.count_nonzero(~p & ~g)),
        int(np.count_nonzero(p & ~g)),
        int(np.count_nonzero(~p & g)),
    )


# ---------------------------------------------------------------------------
# character-level severity credit. Labels: 0 = OK, 1 = MINOR, 2 = MAJOR.
# Returns twice the weighted true positives so the result stays integral.


@njit
def _nb_span_credit(pred, gold):
    tp2 = 0
    npred = 0
    ngold = 0
    for i in range(pred.shape[0]):
        p = pred[i]
        g = gold[i]
        if p != 0:
            npred += 1
        if g != 0:
            ngold += 1
        if p != 0 and g != 0:
            tp2 += 2 if p == g else 1
    return tp2, npred, ngold


def _np_span_credit(pred, gold):
    pe = pred != 0
    ge = gold != 0
    both = pe & ge
    tp2 = 2 * int(np.count_nonzero(both & (pred == gold))) + int(
        np.count_nonzero(both & (pred != gold))
    )
    return tp2, int(np.count_nonzero(pe)), int(np.count_nonzero(ge))


# ---------------------------------------------------------------------------
# row-wise weighted softmax cross-entropy with its logit gradient.
# loss_i = -coef_i * log p_i[cls_i]; dlogits_i = coef_i * (p_i - onehot_i)


@njit
def _nb_softmax_xent(logits, cls, coef):
    n, c = logits.shape
    probs = np.empty((n, c))
    dlogits = np.empty((n, c))
    loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for k in range(1, c):
            if logits[i, k] > m:
                m = logits[i, k]
        tot = 0.0
        for k in range(c):
            e = np.exp(logits[i, k] - m)
            probs[i, k] = e
            tot += e
        for k in range(c):
            probs[i, k] /= tot
        loss -= coef[i] * (logits[i, cls[i]] - m - np.log(tot))
        for k in range(c):
            dlogits[i, k] = coef[i] * probs[i, k]
        dlogits[i, cls[i]] -= coef[i]
    return probs, loss, dlogits


def _np_softmax_xent(logits, cls, coef):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    tot = expd.sum(axis=1, keepdims=True)
    probs = expd / tot
    rows = np.arange(logits.shape[0])
    logp = shifted[rows, cls] - np.log(tot[:, 0])
    loss = -float(np.sum(coef * logp))
    dlogits = coef[:, None] * probs
    dlogits[rows, cls] -= coef
    return probs, loss, dlogits


sparsemax_threshold = select(_nb_sparsemax_threshold, _np_sparsemax_threshold)
average_ranks = select(_nb_average_ranks, _np_average_ranks)
kendall_counts = select(_nb_kendall_counts, _np_kendall_counts)
confusion = select(_nb_confusion, _np_confusion)
span_credit = select(_nb_span_credit, _np_span_credit)
softmax_xent = select(_nb_softmax_xent, _np_softmax_xent)

PAIRS = {
    "sparsemax_threshold": (_nb_sparsemax_threshold, _np_sparsemax_threshold),
    "average_ranks": (_nb_average_ranks, _np_average_ranks),
    "kendall_counts": (_nb_kendall_counts, _np_kendall_counts),
    "confusion": (_nb_confusion, _np_confusion),
    "span_credit": (_nb_span_credit, _np_span_credit),
    "softmax_xent": (_nb_softmax_xent, _np_softmax_xent),
}
