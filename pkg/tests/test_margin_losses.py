import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_rpcl.margin_losses import (
    CenterLossState,
    ClassifierHead,
    MarginConfig,
    apply_rpcl_margins,
    center_rpcl_loss,
    cross_entropy,
    loss_and_grads,
    raw_cosine_logits,
    select_rival,
    update_centers,
)
from deep_rpcl.numeric_core import Rng


def random_instance(seed, n=6, d=4, k=5):
    r = Rng(seed)
    X = r.normal((n, d))
    W = r.normal((k, d))
    y = r.integers(k, n)
    return X, ClassifierHead(W), y


def test_config_defaults():
    assert (MarginConfig("rpcl_cos").m, MarginConfig("rpcl_cos").gamma) == (0.35, 0.05)
    assert (MarginConfig("rpcl_arc").m, MarginConfig("rpcl_arc").gamma) == (0.5, 0.05)
    assert MarginConfig("cos").gamma == 0.0
    assert MarginConfig("rpcl_cos").s == 30.0


def test_config_rejects_large_gamma():
    with pytest.raises(ValueError, match="γ ≪ m"):
        MarginConfig("rpcl_cos", m=0.2, gamma=0.3)
    with pytest.raises(ValueError, match="unknown variant"):
        MarginConfig("sphere")


def test_raw_logits_examples():
    head = ClassifierHead([[1.0, 0.0], [0.0, 1.0]])
    cos, z = raw_cosine_logits([[2.0, 0.0], [1.0, 1.0]], head, MarginConfig("cos"))
    assert z[0, 0] == pytest.approx(30.0, abs=1e-5)
    assert z[0, 1] == 0.0
    assert z[1, 0] == pytest.approx(21.213, abs=1e-3)
    with pytest.raises(ValueError, match="dimension mismatch"):
        raw_cosine_logits([[1.0, 0.0, 0.0]], head, MarginConfig("cos"))


@pytest.mark.parametrize("row, target, rival", [([5, 3, 4], 0, 2), ([1, 9, 9], 0, 1), ([2, 7, 1], 1, 0)])
def test_select_rival(row, target, rival):
    assert select_rival(row, target) == rival


def test_select_rival_needs_two():
    with pytest.raises(ValueError):
        select_rival([3.0], 0)


def test_rpcl_cos_hand_example():
    z, rivals = apply_rpcl_margins([[0.8, 0.7, 0.2]], [0], MarginConfig("rpcl_cos", s=30, m=0.35, gamma=0.05))
    np.testing.assert_allclose(z, [[13.5, 22.5, 6.0]], rtol=0, atol=1e-12)
    assert rivals.tolist() == [1]


def test_rpcl_arc_target_example():
    z, _ = apply_rpcl_margins([[0.5, 0.1, 0.0]], [0], MarginConfig("rpcl_arc", s=30, m=0.5, gamma=0.05))
    assert z[0, 0] == pytest.approx(30 * math.cos(math.pi / 3 + 0.5), abs=1e-12)
    assert z[0, 0] == pytest.approx(0.708, abs=1e-3)
    # rival logit moves up by the angle gamma
    assert z[0, 1] == pytest.approx(30 * math.cos(math.acos(0.1) - 0.05), abs=1e-12)


def test_arc_guard_past_pi():
    cfg = MarginConfig("arc", s=10, m=0.5)
    z, _ = apply_rpcl_margins([[-0.99, 0.0]], [0], cfg)
    assert z[0, 0] == pytest.approx(10 * (-0.99 - 0.5 * math.sin(0.5)))


def test_rival_angle_floor_at_zero():
    cfg = MarginConfig("rpcl_arc", s=10, m=0.5, gamma=0.05)
    z, _ = apply_rpcl_margins([[0.0, 1.0 - 1e-9]], [0], cfg)
    assert z[0, 1] == pytest.approx(10.0)


def test_softmax_has_no_margins():
    with pytest.raises(ValueError, match="margins undefined for plain softmax"):
        apply_rpcl_margins([[0.1, 0.2]], [0], MarginConfig("softmax"))


def test_cross_entropy_examples():
    assert cross_entropy([[0.0, 0.0, 0.0]], [0]) == pytest.approx(math.log(3), rel=1e-14)
    assert cross_entropy([[10.0, -10.0]], [0]) == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)
    one = cross_entropy([[1.0, 2.0, 0.5]], [2])
    assert cross_entropy([[1.0, 2.0, 0.5], [1.0, 2.0, 0.5]], [2, 2]) == pytest.approx(one, rel=1e-15)
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy([[0.0, 0.0]], [2])


def test_gamma_zero_reduces_to_base():
    X, head, y = random_instance(1)
    for fam, m in (("cos", 0.35), ("arc", 0.5)):
        a = loss_and_grads(X, y, head, MarginConfig(f"rpcl_{fam}", m=m, gamma=0.0))
        b = loss_and_grads(X, y, head, MarginConfig(fam, m=m))
        assert a.loss == b.loss
        np.testing.assert_allclose(a.grad_features, b.grad_features, rtol=1e-12, atol=1e-14)


def test_zero_margin_reduces_to_scaled_softmax():
    X, head, y = random_instance(2)
    cos, z = raw_cosine_logits(X, head, MarginConfig("cos"))
    ref = cross_entropy(z, y)
    for fam in ("cos", "arc"):
        assert loss_and_grads(X, y, head, MarginConfig(fam, m=0.0)).loss == pytest.approx(ref, rel=1e-10)


def test_two_class_identity():
    X, head, y = random_instance(3, k=2)
    a = loss_and_grads(X, y, head, MarginConfig("rpcl_cos", m=0.3, gamma=0.1)).loss
    b = loss_and_grads(X, y, head, MarginConfig("cos", m=0.4)).loss
    assert a == pytest.approx(b, rel=1e-12)


def test_non_rival_logits_bit_identical():
    X, head, y = random_instance(4, k=6)
    cos, raw = raw_cosine_logits(X, head, MarginConfig("rpcl_cos"))
    for variant in ("rpcl_cos", "rpcl_arc"):
        z, rivals = apply_rpcl_margins(cos, y, MarginConfig(variant))
        for i in range(len(y)):
            for j in range(6):
                if j not in (y[i], rivals[i]):
                    assert z[i, j] == raw[i, j]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.6), st.floats(0.0, 0.6))
def test_loss_monotone_in_target_margin(seed, m1, m2):
    X, head, y = random_instance(seed)
    lo, hi = sorted((m1, m2))
    a = loss_and_grads(X, y, head, MarginConfig("cos", m=lo)).loss
    b = loss_and_grads(X, y, head, MarginConfig("cos", m=hi)).loss
    assert b >= a - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.4), st.floats(0.0, 0.4))
def test_arc_monotone_in_margin_below_pi(seed, m1, m2):
    X, head, y = random_instance(seed)
    cos, _ = raw_cosine_logits(X, head, MarginConfig("arc"))
    theta = np.arccos(cos[np.arange(len(y)), y])
    keep = theta + 0.4 < math.pi
    if not keep.any():
        return
    X, y = X[keep], y[keep]
    lo, hi = sorted((m1, m2))
    a = loss_and_grads(X, y, head, MarginConfig("arc", m=lo)).loss
    b = loss_and_grads(X, y, head, MarginConfig("arc", m=hi)).loss
    assert b >= a - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_loss_monotone_in_rival_margin(seed, g1, g2):
    X, head, y = random_instance(seed)
    lo, hi = sorted((g1, g2))
    a = loss_and_grads(X, y, head, MarginConfig("rpcl_cos", m=0.4, gamma=lo)).loss
    b = loss_and_grads(X, y, head, MarginConfig("rpcl_cos", m=0.4, gamma=hi)).loss
    assert b >= a - 1e-12


def test_saturated_softmax_has_tiny_gradient():
    head = ClassifierHead(np.eye(3))
    out = loss_and_grads([[50.0, 0.0, 0.0]], [0], head, MarginConfig("softmax"))
    assert np.max(np.abs(out.grad_features)) < 1e-15


def test_loss_rejects_bad_input():
    head = ClassifierHead(np.eye(2))
    with pytest.raises(FloatingPointError, match="input"):
        loss_and_grads([[np.inf, 0.0]], [0], head, MarginConfig("softmax"))
    with pytest.raises(ValueError, match="zero feature row"):
        loss_and_grads([[0.0, 0.0]], [0], head, MarginConfig("cos"))


def test_head_needs_two_classes():
    with pytest.raises(ValueError):
        ClassifierHead([[1.0, 0.0]])


def _state(centers, **kw):
    return CenterLossState(np.array(centers, dtype=float), **kw)


def test_center_loss_hand_example():
    st_ = _state([[0.0, 0.0], [2.0, 0.0]])
    loss, grad, rivals = center_rpcl_loss([[1.0, 0.0]], [0], st_, base_loss=1.25)
    assert loss == pytest.approx(1.25 + 0.006, abs=1e-15)
    assert rivals.tolist() == [1]
    np.testing.assert_allclose(grad, [[2 * 0.008 * 1 - 2 * 0.002 * (-1), 0.0]])


def test_center_loss_without_rival_is_plain_center_loss():
    X = Rng(3).normal((5, 2))
    y = np.array([0, 1, 2, 0, 1])
    C = Rng(4).normal((3, 2))
    loss, grad, _ = center_rpcl_loss(X, y, _state(C, gamma_c=0.0))
    assert loss == pytest.approx(0.008 * np.sum((X - C[y]) ** 2), rel=1e-14)
    np.testing.assert_allclose(grad, 0.016 * (X - C[y]), rtol=1e-14)


def test_center_loss_at_target_center():
    C = [[1.0, 1.0], [3.0, 1.0], [-4.0, 0.0]]
    loss, grad, rivals = center_rpcl_loss([[1.0, 1.0]], [0], _state(C))
    assert rivals.tolist() == [1]
    np.testing.assert_allclose(grad, [[-2 * 0.002 * (1.0 - 3.0), 0.0]])
    # a descent step moves x away from the rival center
    x_new = np.array([1.0, 1.0]) - 0.1 * grad[0]
    assert np.linalg.norm(x_new - C[1]) > 2.0


def test_center_loss_errors():
    with pytest.raises(ValueError, match="not initialized"):
        center_rpcl_loss([[1.0, 0.0]], [0], CenterLossState())
    with pytest.raises(ValueError):
        CenterLossState(None, beta_c=0.002, gamma_c=0.008)


def test_update_centers_examples():
    st_ = _state([[0.0, 0.0], [5.0, 5.0]], alpha=0.5)
    new = update_centers(st_, [[2.0, 0.0]], [0])
    np.testing.assert_array_equal(new.class_centers, [[1.0, 0.0], [5.0, 5.0]])
    jump = update_centers(_state([[0.0, 0.0], [5.0, 5.0]], alpha=1.0), [[2.0, 3.0], [7.0, 1.0]], [0, 1])
    np.testing.assert_array_equal(jump.class_centers, [[2.0, 3.0], [7.0, 1.0]])
    # input state untouched
    np.testing.assert_array_equal(st_.class_centers, [[0.0, 0.0], [5.0, 5.0]])
