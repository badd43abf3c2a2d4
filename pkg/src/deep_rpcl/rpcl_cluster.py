"""Rival penalized competitive learning for clustering.

For each presented sample the nearest active center (winner) moves toward it
and the second nearest (rival) is pushed away by a fraction ``gamma`` of the
same step. Surplus centers drift out of the data and are deactivated, which
is how the number of clusters gets selected.
"""

from dataclasses import dataclass, field

import numpy as np

from .numeric_core import Rng, as_matrix


class InsufficientCenters(ValueError):
    pass


@dataclass
class CenterSet:
    centers: np.ndarray
    active: np.ndarray = None
    wins: np.ndarray = None
    trajectory: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.centers = as_matrix(self.centers, "centers").copy()
        k = self.centers.shape[0]
        if k < 2:
            raise ValueError("a CenterSet needs at least 2 centers")
        self.active = np.ones(k, bool) if self.active is None else np.asarray(self.active, bool).copy()
        self.wins = np.zeros(k, np.int64) if self.wins is None else np.asarray(self.wins, np.int64).copy()

    @property
    def n_active(self):
        return int(self.active.sum())

    def copy(self):
        return CenterSet(self.centers, self.active, self.wins)


INIT_METHODS = ("kmeans++", "uniform")


@dataclass
class RpclParams:
    eta: float = 0.05
    gamma: float = 0.05
    epochs: int = 100
    tol: float = 1e-4
    expel_radius_factor: float = 3.0
    anneal: bool = False
    init: str = "kmeans++"
    history: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.gamma < 0.0 or self.gamma >= 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.expel_radius_factor <= 0.0:
            raise ValueError("expel_radius_factor must be positive")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {', '.join(INIT_METHODS)}, got {self.init!r}")


def select_winner_rival(x, cs):
    """Indices of the nearest and second-nearest active centers.

    Distance is squared Euclidean; ties go to the lower index.
    """
    idx = np.flatnonzero(cs.active)
    if idx.size < 2:
        raise InsufficientCenters("insufficient centers")
    diff = cs.centers[idx] - np.asarray(x, dtype=np.float64)
    d = np.sum(diff * diff, axis=1)
    # stable argsort keeps index order among equal distances
    order = np.argsort(d, kind="stable")
    return int(idx[order[0]]), int(idx[order[1]])


def rpcl_step(x, cs, p):
    """One online update; mutates and returns ``cs``."""
    x = np.asarray(x, dtype=np.float64)
    c, r = select_winner_rival(x, cs)
    cs.centers[c] += p.eta * (x - cs.centers[c])
    if p.gamma > 0.0:
        cs.centers[r] -= p.eta * p.gamma * (x - cs.centers[r])
    cs.wins[c] += 1
    return cs


def _bounding_radius(X):
    return float(np.sqrt(np.max(np.sum((X - X.mean(axis=0)) ** 2, axis=1))))


def _nearest_datum_dist(X, centers):
    d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.sqrt(d.min(axis=0))


def _run_epoch(rows, order, cs, eta, gamma):
    # Same arithmetic as rpcl_step, on Python floats: far cheaper than numpy
    # for the handful of low-dimensional centers this loop touches per sample.
    idx = np.flatnonzero(cs.active).tolist()
    mu = [cs.centers[k].tolist() for k in idx]
    wins = [0] * len(idx)
    push = eta * gamma
    span = range(len(mu))
    for i in order:
        x = rows[i]
        best = second = -1
        d_best = d_second = float("inf")
        for j in span:
            d = 0.0
            for xv, mv in zip(x, mu[j]):
                d += (xv - mv) * (xv - mv)
            if d < d_best:
                second, d_second = best, d_best
                best, d_best = j, d
            elif d < d_second:
                second, d_second = j, d
        mu[best] = [mv + eta * (xv - mv) for xv, mv in zip(x, mu[best])]
        if gamma > 0.0:
            mu[second] = [mv - push * (xv - mv) for xv, mv in zip(x, mu[second])]
        wins[best] += 1
    for j, k in enumerate(idx):
        cs.centers[k] = mu[j]
        cs.wins[k] += wins[j]


def _distinct_rows(X, k, rng):
    picked = []
    seen = set()
    for i in rng.permutation(X.shape[0]):
        key = X[i].tobytes()
        if key not in seen:
            seen.add(key)
            picked.append(X[i])
            if len(picked) == k:
                return np.array(picked)
    raise ValueError(f"data holds only {len(picked)} distinct points, fewer than k_init={k}")


def _spread_rows(X, k, rng):
    # D^2 weighting: each new center is a datum drawn with probability
    # proportional to its squared distance from the centers picked so far
    first = int(rng.integers(X.shape[0], 1)[0])
    picked = [X[first]]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    while len(picked) < k:
        total = float(d2.sum())
        if total == 0.0:
            raise ValueError(f"data holds only {len(picked)} distinct points, fewer than k_init={k}")
        cum = np.cumsum(d2)
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        i = min(i, X.shape[0] - 1)
        while d2[i] == 0.0:  # guard the float edge at the top of the range
            i -= 1
        picked.append(X[i])
        d2 = np.minimum(d2, np.sum((X - X[i]) ** 2, axis=1))
    return np.array(picked)


def fit_rpcl(data, k_init, p, rng):
    """Cluster ``data`` starting from ``k_init`` distinct data points.

    The starting points are drawn uniformly (``p.init == "uniform"``) or with
    k-means++ weighting, which keeps several centers from starting in one
    cluster while another gets none.

    ``data`` is a matrix or anything with a ``features`` attribute. Each epoch
    presents every sample once in a seeded order. Afterwards, an active center
    is expelled when its distance to the nearest sample exceeds
    ``p.expel_radius_factor`` times the data's bounding radius, or when it won
    no sample during the epoch (it has been pushed out of every cluster).
    Stops early once no center moved more than ``p.tol`` in an epoch.

    With ``p.anneal`` both ``eta`` and ``gamma`` decay linearly to zero over
    the run, removing the offset that a constant rival push leaves on the
    surviving centers.
    """
    X = as_matrix(getattr(data, "features", data), "data")
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty data")
    if k_init < 2:
        raise ValueError("k_init must be at least 2")
    if k_init > n:
        raise ValueError(f"k_init={k_init} exceeds sample count {n}")
    if not isinstance(rng, Rng):
        rng = Rng(rng)

    init = _spread_rows if p.init == "kmeans++" else _distinct_rows
    cs = CenterSet(init(X, k_init, rng))
    rows = X.tolist()
    radius = _bounding_radius(X)
    limit = p.expel_radius_factor * radius
    trace = [] if p.history else None
    for epoch in range(p.epochs):
        frac = 1.0 - epoch / p.epochs if p.anneal else 1.0
        step = RpclParams(eta=max(p.eta * frac, 1e-12), gamma=p.gamma * frac, tol=p.tol, epochs=p.epochs)
        before = cs.centers.copy()
        wins_before = cs.wins.copy()
        _run_epoch(rows, rng.permutation(n).tolist(), cs, step.eta, step.gamma)
        if trace is not None:
            trace.append(cs.centers.copy())
        won = cs.wins - wins_before
        far = _nearest_datum_dist(X, cs.centers) > limit
        expel = cs.active & (far | (won == 0))
        if expel.any() and cs.n_active - int(expel.sum()) >= 1:
            cs.active &= ~expel
        moved = np.sqrt(np.sum((cs.centers - before) ** 2, axis=1))
        if cs.n_active < 2 or moved.max() < p.tol:
            break
    if cs.n_active == 1:
        # a lone center wins every sample; its fixed point is the data mean
        cs.centers[np.flatnonzero(cs.active)[0]] = X.mean(axis=0)
    if trace is not None:
        cs.trajectory = trace
    return cs
