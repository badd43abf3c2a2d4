"""Synthetic identities, low-resolution degradation, evaluation protocols and
the plain-text dataset format.

File format: a header line ``dim n_classes n_rows`` followed by one line per
sample, ``label v1 ... v_dim``, reals written with 17 significant digits so
that a save/load round trip is exact.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numeric_core import Rng, as_matrix, normalize_rows


class DatasetFormatError(ValueError):
    pass


@dataclass
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    normalized: bool = False

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.labels) != self.features.shape[0]:
            raise ValueError(f"{self.features.shape[0]} rows but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        return LabeledSet(self.features[idx], self.labels[idx], self.class_count, self.normalized)

    def __eq__(self, other):
        return (
            isinstance(other, LabeledSet)
            and self.class_count == other.class_count
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


@dataclass
class PairProtocol:
    pairs: np.ndarray  # (P, 2) row indices
    same: np.ndarray   # (P,) bool

    def __len__(self):
        return len(self.same)


@dataclass
class GalleryProbe:
    gallery_features: np.ndarray
    gallery_ids: np.ndarray
    probe_features: np.ndarray
    probe_ids: np.ndarray
    gallery_index: np.ndarray
    probe_index: np.ndarray


def _angle_deg(u, v):
    return math.degrees(math.acos(max(-1.0, min(1.0, float(u @ v)))))


def draw_class_means(n_classes, dim, rng, min_angle_deg=15.0, max_tries=1000, restarts=50):
    """Unit vectors with pairwise angles of at least ``min_angle_deg``."""
    if n_classes < 2 or dim < 1:
        raise ValueError("need n_classes >= 2 and dim >= 1")
    for _ in range(restarts):
        means = []
        for _ in range(n_classes):
            for _ in range(max_tries):
                v = rng.normal((dim,))
                norm = np.linalg.norm(v)
                if norm < 1e-12:
                    continue
                v = v / norm
                if all(_angle_deg(v, u) >= min_angle_deg for u in means):
                    means.append(v)
                    break
            else:
                break
        if len(means) == n_classes:
            return np.array(means)
    raise ValueError(
        f"could not place {n_classes} means {min_angle_deg} degrees apart in {dim}-D; "
        "use fewer classes, a higher dimension or a smaller min_angle"
    )


def sample_clusters(means, per_class, spread, rng, normalize=False):
    means = as_matrix(means, "means")
    n_classes, dim = means.shape
    labels = np.repeat(np.arange(n_classes), per_class)
    X = means[labels] + rng.normal((len(labels), dim), scale=spread)
    if normalize:
        X = normalize_rows(X)[0]
    return LabeledSet(X, labels, n_classes, normalize)


def generate_clusters(n_classes, per_class, dim, spread, rng, normalize=False, min_angle_deg=15.0):
    """Gaussian identities around unit-norm means, ``per_class`` rows each."""
    if n_classes < 2 or per_class < 1 or spread < 0:
        raise ValueError("need n_classes >= 2, per_class >= 1 and spread >= 0")
    means = draw_class_means(n_classes, dim, rng, min_angle_deg)
    return sample_clusters(means, per_class, spread, rng, normalize)


def degrade_lr(data, noise_sigma, rng):
    """Inflate feature variance with additive Gaussian noise; labels kept."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if noise_sigma == 0:
        return LabeledSet(data.features.copy(), data.labels.copy(), data.class_count, data.normalized)
    X = data.features + rng.normal(data.features.shape, scale=noise_sigma)
    if data.normalized:
        X = normalize_rows(X)[0]
    return LabeledSet(X, data.labels.copy(), data.class_count, data.normalized)


def make_pairs(data, n_pos, n_neg, rng):
    """Sample distinct same-identity and cross-identity index pairs."""
    y = data.labels
    n = len(y)
    counts = np.bincount(y, minlength=data.class_count)
    pos_avail = int(np.sum(counts * (counts - 1) // 2))
    neg_avail = n * (n - 1) // 2 - pos_avail
    if n_pos > pos_avail:
        raise ValueError(f"requested {n_pos} positive pairs, only {pos_avail} exist")
    if n_neg > neg_avail:
        raise ValueError(f"requested {n_neg} negative pairs, only {neg_avail} exist")

    def draw(count, want_same):
        chosen = []
        seen = set()
        # rejection sampling is fine while the request is a small share of the pool
        avail = pos_avail if want_same else neg_avail
        if count > avail // 2:
            cand = [(a, b) for a in range(n) for b in range(a + 1, n) if (y[a] == y[b]) == want_same]
            pick = rng.choice(len(cand), count)
            return [cand[i] for i in pick]
        while len(chosen) < count:
            a, b = (int(v) for v in rng.integers(n, 2))
            if a == b or (y[a] == y[b]) != want_same:
                continue
            key = (min(a, b), max(a, b))
            if key in seen:
                continue
            seen.add(key)
            chosen.append(key)
        return chosen

    pairs = draw(n_pos, True) + draw(n_neg, False)
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return PairProtocol(arr, y[arr[:, 0]] == y[arr[:, 1]])


def make_gallery_probe(hr, lr):
    """First HR row of each identity forms the gallery; every LR row is a probe."""
    hr_ids = np.unique(hr.labels)
    lr_ids = np.unique(lr.labels)
    missing = np.setdiff1d(lr_ids, hr_ids)
    if missing.size:
        raise ValueError(f"probe identity {int(missing[0])} has no gallery entry")
    missing = np.setdiff1d(hr_ids, lr_ids)
    if missing.size:
        raise ValueError(f"identity {int(missing[0])} has no low-resolution rows")
    g_idx = np.array([int(np.flatnonzero(hr.labels == c)[0]) for c in hr_ids])
    p_idx = np.arange(len(lr))
    return GalleryProbe(hr.features[g_idx], hr.labels[g_idx], lr.features, lr.labels.copy(), g_idx, p_idx)


def save_set(path, data):
    with open(path, "w") as fh:
        fh.write(f"{data.dim} {data.class_count} {len(data)}\n")
        for label, row in zip(data.labels, data.features):
            fh.write(" ".join([str(int(label))] + [format(v, ".17g") for v in row]) + "\n")


def load_set(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetFormatError(f"{path}: no header")
    try:
        dim, n_classes, n_rows = (int(v) for v in lines[0].split())
    except ValueError:
        raise DatasetFormatError(f"{path}: line 1: header must be 'dim n_classes n_rows'") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n_rows:
        raise DatasetFormatError(f"{path}: header declares {n_rows} rows, found {len(body)}")
    X = np.empty((n_rows, dim))
    y = np.empty(n_rows, dtype=np.int64)
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != dim + 1:
            raise DatasetFormatError(f"{path}: row {i} (line {i + 2}): expected {dim} values, got {len(parts) - 1}")
        try:
            y[i] = int(parts[0])
            X[i] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: row {i} (line {i + 2}): {exc}") from None
    try:
        return LabeledSet(X, y, n_classes)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
