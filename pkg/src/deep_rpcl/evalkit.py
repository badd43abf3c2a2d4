"""Verification, identification and embedding-geometry metrics.

All scores are cosine similarities, so every metric here is invariant to
rescaling the embeddings.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .numeric_core import as_matrix, cosine_matrix, normalize_rows


@dataclass
class EvalReport:
    scalars: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)  # name -> (header, rows)


def metric_threads():
    raw = os.environ.get("RPCL_METRIC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RPCL_METRIC_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def pair_scores(embeddings, protocol):
    E = as_matrix(embeddings, "embeddings")
    if len(protocol) == 0:
        raise ValueError("empty protocol")
    if protocol.pairs.max() >= E.shape[0]:
        raise ValueError(f"pair index {int(protocol.pairs.max())} beyond {E.shape[0]} embeddings")
    En, bad = normalize_rows(E)
    if bad.any():
        raise ValueError(f"zero embedding at row {int(np.flatnonzero(bad)[0])}")
    a, b = protocol.pairs[:, 0], protocol.pairs[:, 1]
    s = np.clip(np.sum(En[a] * En[b], axis=1), -1.0, 1.0)
    return s[protocol.same], s[~protocol.same]


def threshold_accuracy(pos, neg):
    """Best accuracy of the rule ``same iff score > t`` and the lowest ``t`` reaching it.

    Candidates are the midpoints between consecutive distinct scores plus one
    point below and one above the observed range.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    total = pos.size + neg.size
    if total == 0:
        raise ValueError("empty protocol")
    u = np.unique(np.concatenate([pos, neg]))
    cand = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    pos_s = np.sort(pos)
    neg_s = np.sort(neg)
    tp = pos.size - np.searchsorted(pos_s, cand, side="right")
    tn = np.searchsorted(neg_s, cand, side="right")
    acc = (tp + tn) / total
    best = int(np.argmax(acc))  # first maximum = lowest threshold
    return float(acc[best]), float(cand[best])


def verification_accuracy(embeddings, protocol):
    """``(accuracy, threshold)`` for same/different decisions on cosine scores."""
    pos, neg = pair_scores(embeddings, protocol)
    return threshold_accuracy(pos, neg)


def roc_curve(pos, neg):
    """``(fpr, tpr)`` arrays, one point per distinct threshold, from (0,0) to (1,1).

    A pair is accepted when its score is at least the threshold.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_curve needs both positive and negative scores")
    thr = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_s = np.sort(pos)
    neg_s = np.sort(neg)
    tpr = (pos.size - np.searchsorted(pos_s, thr, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_s, thr, side="left")) / neg.size
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr])


def _true_ranks(sims, g_ids, p_ids):
    ranks = np.empty(len(p_ids), dtype=np.int64)
    cols = np.arange(len(g_ids))
    for i, pid in enumerate(p_ids):
        t = int(np.flatnonzero(g_ids == pid)[0])
        row = sims[i]
        ranks[i] = 1 + np.count_nonzero(row > row[t]) + np.count_nonzero((row == row[t]) & (cols < t))
    return ranks


def cmc_curve(gallery, gallery_ids, probes, probe_ids, max_k=None):
    """Rank-k identification rates for ``k = 1..max_k``.

    Similarity ties rank the lower gallery index first.
    """
    g_ids = np.asarray(gallery_ids)
    p_ids = np.asarray(probe_ids)
    unknown = np.setdiff1d(p_ids, g_ids)
    if unknown.size:
        raise ValueError(f"probe identity {unknown[0]} is not in the gallery")
    if len(p_ids) == 0:
        raise ValueError("no probes")
    max_k = len(g_ids) if max_k is None else int(max_k)
    sims = cosine_matrix(probes, gallery)

    threads = metric_threads()
    if threads > 1 and len(p_ids) > 1:
        chunks = np.array_split(np.arange(len(p_ids)), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda c: _true_ranks(sims[c], g_ids, p_ids[c]), chunks)
            ranks = np.concatenate(list(parts))
    else:
        ranks = _true_ranks(sims, g_ids, p_ids)
    k = np.arange(1, max_k + 1)
    return np.array([np.count_nonzero(ranks <= kk) for kk in k]) / len(p_ids)


def fisher_criterion(pos, neg):
    """``(mean_pos - mean_neg)^2 / (var_pos + var_neg)`` with population variances."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.size < 2 or neg.size < 2:
        raise ValueError("fisher criterion needs at least 2 scores per group")
    scatter = pos.var() + neg.var()
    if scatter == 0.0:
        raise ValueError("degenerate scatter")
    return float((pos.mean() - neg.mean()) ** 2 / scatter)


def _deg(c):
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def class_centers(features, labels, n_classes):
    """Normalized mean of each class's normalized features."""
    Xn, bad = normalize_rows(features)
    if bad.any():
        raise ValueError(f"zero feature at row {int(np.flatnonzero(bad)[0])}")
    y = np.asarray(labels)
    centers = np.empty((n_classes, Xn.shape[1]))
    for j in range(n_classes):
        members = Xn[y == j]
        if len(members) == 0:
            raise ValueError(f"class {j} has no features")
        centers[j] = members.mean(axis=0)
    C, bad = normalize_rows(centers)
    if bad.any():
        raise ValueError(f"class {int(np.flatnonzero(bad)[0])} has a zero mean direction")
    return Xn, C


def _mean_min_offdiag(A):
    cos = A @ A.T
    np.fill_diagonal(cos, -np.inf)
    return float(np.mean(_deg(cos.max(axis=1))))


def angle_statistics(features, labels, head_W):
    """Angle statistics in degrees.

    ``intra``: mean angle between each feature and its class center;
    ``inter``: mean over classes of the smallest angle to another center;
    ``w-w``: mean over classes of the smallest angle between weight rows;
    ``w-c``: mean angle between each weight row and its class center.
    """
    W = as_matrix(head_W, "head_W")
    n = W.shape[0]
    if n < 2:
        raise ValueError("angle statistics need at least 2 classes")
    y = np.asarray(labels, dtype=np.int64)
    Xn, C = class_centers(features, y, n)
    Wn, bad = normalize_rows(W)
    if bad.any():
        raise ValueError(f"zero weight row {int(np.flatnonzero(bad)[0])}")
    return {
        "intra": float(np.mean(_deg(np.sum(Xn * C[y], axis=1)))),
        "inter": _mean_min_offdiag(C),
        "w-w": _mean_min_offdiag(Wn),
        "w-c": float(np.mean(_deg(np.sum(Wn * C, axis=1)))),
    }
