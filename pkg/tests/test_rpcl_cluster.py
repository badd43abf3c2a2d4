import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_rpcl.numeric_core import Rng
from deep_rpcl.rpcl_cluster import (
    CenterSet,
    InsufficientCenters,
    RpclParams,
    fit_rpcl,
    rpcl_step,
    select_winner_rival,
)
from oracles import greedy_match, lloyd_kmeans

MEANS = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
SIGMA = 0.1


def three_blobs(seed, per=200):
    r = Rng(seed)
    return np.concatenate([m + r.normal((per, 2), SIGMA) for m in MEANS])


@pytest.mark.parametrize(
    "x, centers, expected",
    [
        ((0.4, 0), [(0, 0), (1, 0), (5, 5)], (0, 1)),
        ((0.5, 0), [(0, 0), (1, 0)], (0, 1)),
        ((3, 3), [(0, 0), (1, 0), (5, 5)], (2, 1)),
    ],
)
def test_select_winner_rival(x, centers, expected):
    assert select_winner_rival(x, CenterSet(centers)) == expected


def test_select_skips_inactive_and_needs_two():
    cs = CenterSet([(0, 0), (1, 0), (5, 5)], active=[False, True, True])
    assert select_winner_rival((0, 0), cs) == (1, 2)
    cs.active[2] = False
    with pytest.raises(InsufficientCenters, match="insufficient centers"):
        select_winner_rival((0, 0), cs)


def test_step_winner_branch():
    cs = rpcl_step((1.0, 0.0), CenterSet([(0, 0), (5, 5)]), RpclParams(eta=0.1, gamma=0.05))
    np.testing.assert_allclose(cs.centers[0], [0.1, 0.0], atol=1e-15)
    assert cs.wins.tolist() == [1, 0]


def test_step_rival_branch():
    # winner at (0.9, 0), rival at (2, 0)
    cs = rpcl_step((1.0, 0.0), CenterSet([(0.9, 0), (2, 0), (9, 9)]), RpclParams(eta=0.1, gamma=0.05))
    np.testing.assert_allclose(cs.centers[1], [2.005, 0.0], atol=1e-15)
    np.testing.assert_array_equal(cs.centers[2], [9, 9])


def test_step_gamma_zero_leaves_rival():
    cs = rpcl_step((1.0, 0.0), CenterSet([(0.9, 0), (2, 0)]), RpclParams(eta=0.1, gamma=0.0))
    np.testing.assert_array_equal(cs.centers[1], [2, 0])


@settings(max_examples=100)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=6, max_size=6),
    st.floats(0.01, 0.99),
    st.floats(0.001, 0.5),
)
def test_step_distances_move_the_right_way(x, flat, eta, gamma):
    x = np.array(x)
    cs = CenterSet(np.array(flat).reshape(3, 2))
    c, r = select_winner_rival(x, cs)
    d_c = np.linalg.norm(x - cs.centers[c])
    d_r = np.linalg.norm(x - cs.centers[r])
    rpcl_step(x, cs, RpclParams(eta=eta, gamma=gamma))
    if d_c > 1e-9:
        assert np.linalg.norm(x - cs.centers[c]) < d_c
    if d_r > 1e-9:
        assert np.linalg.norm(x - cs.centers[r]) > d_r


def test_fit_selects_three_clusters():
    X = three_blobs(11)
    cs = fit_rpcl(X, 5, RpclParams(eta=0.05, gamma=0.1, epochs=200, anneal=True), Rng(3))
    assert cs.n_active == 3
    found = cs.centers[cs.active]
    tol = 0.2 * SIGMA * np.sqrt(2)
    for _, _, d in greedy_match(found, MEANS):
        assert d < tol
    # independent check against Lloyd's k-means seeded at the true means
    km = lloyd_kmeans(X, MEANS)
    for _, _, d in greedy_match(found, km):
        assert d < tol


def test_fit_single_cluster_lands_on_mean():
    X = Rng(1).normal((300, 2), 0.1)
    p = RpclParams(eta=0.05, gamma=0.1, epochs=200, anneal=True)
    cs = fit_rpcl(X, 2, p, Rng(3))
    assert cs.n_active == 1
    np.testing.assert_allclose(cs.centers[cs.active][0], X.mean(axis=0), atol=p.tol)


def test_fit_repeated_points_are_fixed_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    X = np.repeat(pts, 10, axis=0)
    exact = fit_rpcl(X, 3, RpclParams(gamma=0.0, epochs=20), Rng(0))
    got = exact.centers[np.lexsort(exact.centers.T[::-1])]
    np.testing.assert_array_equal(got, pts[np.lexsort(pts.T[::-1])])
    annealed = fit_rpcl(X, 3, RpclParams(gamma=0.05, epochs=200, anneal=True), Rng(0))
    assert annealed.n_active == 3
    # pull and push both scale with eta, so the balance point sits O(gamma) off
    for _, _, d in greedy_match(annealed.centers, pts):
        assert d < 0.05


def test_gamma_zero_is_winner_take_all():
    X = three_blobs(2, per=40)
    p = RpclParams(eta=0.05, gamma=0.0, epochs=5, history=True)
    fast = fit_rpcl(X, 4, p, Rng(8))

    # replay with the public numpy step; same seed gives the same draw order
    rng = Rng(8)
    from deep_rpcl.rpcl_cluster import _spread_rows

    ref = CenterSet(_spread_rows(X, 4, rng))
    for epoch in range(p.epochs):
        for i in rng.permutation(len(X)):
            c, _ = select_winner_rival(X[i], ref)
            ref.centers[c] += p.eta * (X[i] - ref.centers[c])
        np.testing.assert_allclose(fast.trajectory[epoch], ref.centers, rtol=0, atol=1e-12)


def test_inactive_centers_never_move():
    X = three_blobs(4)
    p = RpclParams(eta=0.05, gamma=0.1, epochs=200, anneal=True, history=True)
    cs = fit_rpcl(X, 5, p, Rng(4))
    traj = np.array(cs.trajectory)
    for k in np.flatnonzero(~cs.active):
        # once expelled, every later snapshot is identical
        moves = np.linalg.norm(np.diff(traj[:, k], axis=0), axis=1)
        last_move = np.flatnonzero(moves > 0)
        stuck = traj[last_move[-1] + 1 if last_move.size else 0:, k]
        assert np.all(stuck == traj[-1, k])
        assert len(stuck) >= 1


def test_fit_errors():
    X = three_blobs(0, per=1)
    with pytest.raises(ValueError, match="exceeds"):
        fit_rpcl(X, 4, RpclParams(), Rng(0))
    with pytest.raises(ValueError):
        fit_rpcl(X, 1, RpclParams(), Rng(0))
    with pytest.raises(ValueError):
        RpclParams(eta=1.5)


def test_wins_bounded_by_presentations():
    X = three_blobs(5, per=30)
    cs = fit_rpcl(X, 4, RpclParams(epochs=7), Rng(1))
    assert np.all(cs.wins >= 0)
    assert cs.wins.sum() <= 7 * len(X)


@pytest.mark.parametrize("init", ["kmeans++", "uniform"])
def test_init_draws_distinct_data_points(init):
    X = np.repeat(three_blobs(6, per=5), 3, axis=0)
    cs = fit_rpcl(X, 5, RpclParams(epochs=0, init=init), Rng(2))
    rows = {r.tobytes() for r in X}
    assert all(c.tobytes() in rows for c in cs.centers)
    assert len({c.tobytes() for c in cs.centers}) == 5


def test_init_too_few_distinct_points():
    X = np.repeat([[0.0, 0.0], [1.0, 1.0]], 4, axis=0)
    for init in ("kmeans++", "uniform"):
        with pytest.raises(ValueError, match="distinct points"):
            fit_rpcl(X, 3, RpclParams(init=init), Rng(0))
    with pytest.raises(ValueError, match="init"):
        RpclParams(init="random")
