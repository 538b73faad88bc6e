import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simspoof import autograd as ag
from simspoof.autograd import ShapeError, Tensor, grad_check
from simspoof.losses import (
    AamConfig,
    AamHead,
    aam_loss,
    cosine_logits,
    relation_mse_loss,
    total_loss,
    weighted_cross_entropy,
)


def scalar_wce(logits, labels, weights):
    num = den = 0.0
    for row, y in zip(logits, labels):
        log_p = row[y] - math.log(sum(math.exp(v) for v in row))
        num += weights[y] * -log_p
        den += weights[y]
    return num / den


def scalar_aam(emb, labels, anchors, s, margins, weights, conventional=False):
    total = 0.0
    for x, y in zip(emb, labels):
        cos = []
        for c in range(2):
            a = anchors[:, c]
            cos.append(float(np.dot(x, a) / (math.sqrt(np.dot(x, x)) * math.sqrt(np.dot(a, a)))))
        cos = [min(max(c, -1 + 1e-7), 1 - 1e-7) for c in cos]
        angle = min(max(math.acos(cos[y]) + margins[y], 0.0), math.pi)
        t, o = s * math.cos(angle), s * cos[1 - y]
        log_p = t - math.log(math.exp(t) + math.exp(o))
        total += weights[y] * log_p if conventional else math.log(weights[y]) + log_p
    return -total / len(labels)


def random_batch(rng, B=6, d=5):
    emb = rng.normal(size=(B, d))
    labels = rng.integers(0, 2, size=B)
    anchors = rng.normal(size=(d, 2))
    return emb, labels, anchors


# -- weighted cross-entropy -----------------------------------------------------

def test_wce_confident_correct():
    assert weighted_cross_entropy(Tensor([[10.0, -10.0]]), [0], (0.3, 0.7)).item() < 1e-8


def test_wce_uniform_is_ln2():
    assert weighted_cross_entropy(Tensor([[0.0, 0.0]]), [0], (1.0, 1.0)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_wce_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 2)) * 3
    labels = [0, 1, 1, 0]
    got = weighted_cross_entropy(Tensor(logits), labels, (0.9, 0.1)).item()
    assert got == pytest.approx(scalar_wce(logits, labels, (0.9, 0.1)), abs=1e-13)


def test_wce_errors():
    with pytest.raises(ShapeError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0, 1])
    with pytest.raises(ShapeError):
        weighted_cross_entropy(Tensor(np.zeros((2, 2))), [0])
    with pytest.raises(ValueError):
        weighted_cross_entropy(Tensor(np.zeros((1, 2))), [2])
    with pytest.raises(ShapeError):
        weighted_cross_entropy(np.zeros((0, 2)), [])


# -- AAM ------------------------------------------------------------------------

def test_aam_config_defaults_and_validation():
    cfg = AamConfig()
    assert (cfg.scale, cfg.margins, cfg.class_weights) == (32.0, (0.2, 0.9), (0.9, 0.1))
    assert not cfg.conventional_weighting
    with pytest.raises(ValueError):
        AamConfig(scale=0)
    with pytest.raises(ValueError):
        AamConfig(margin_spoof=1.5)
    with pytest.raises(ValueError):
        AamConfig(class_weights=(1.0, 0.0))


def test_aam_aligned_sample_value():
    anchors = np.array([[1.0, 0.0], [0.0, 1.0]])
    cfg = AamConfig(class_weights=(1.0, 0.1))
    got = aam_loss(Tensor([[3.0, 0.0]]), [0], anchors, cfg).item()
    # cosine clamp moves theta off 0 by ~4.5e-4 rad
    theta = math.acos(1 - 1e-7)
    t = 32 * math.cos(theta + 0.2)
    expected = -(t - math.log(math.exp(t) + 1.0))
    assert got == pytest.approx(expected, rel=1e-9)
    assert got == pytest.approx(2.4e-14, abs=1e-14)


@pytest.mark.parametrize("conventional", [False, True])
def test_aam_matches_scalar_oracle(conventional):
    rng = np.random.default_rng(1)
    emb, labels, anchors = random_batch(rng)
    cfg = AamConfig(scale=8.0, margin_bonafide=0.3, margin_spoof=0.5, class_weights=(0.7, 0.3),
                    conventional_weighting=conventional)
    got = aam_loss(Tensor(emb), labels, anchors, cfg).item()
    expected = scalar_aam(emb, labels, anchors, 8.0, (0.3, 0.5), (0.7, 0.3), conventional)
    assert got == pytest.approx(expected, abs=1e-12)


def test_printed_weighting_adds_log_weight():
    rng = np.random.default_rng(2)
    emb, labels, anchors = random_batch(rng)
    weighted = aam_loss(Tensor(emb), labels, anchors, AamConfig()).item()
    plain = aam_loss(Tensor(emb), labels, anchors, AamConfig(class_weights=(1.0, 1.0))).item()
    shift = -np.mean(np.log(np.array([0.9, 0.1])[labels]))
    assert weighted - plain == pytest.approx(shift, abs=1e-12)


def test_aam_degenerates_to_cross_entropy():
    rng = np.random.default_rng(3)
    cfg = AamConfig(scale=1.0, margin_bonafide=0.0, margin_spoof=0.0, class_weights=(1.0, 1.0))
    for _ in range(20):
        emb, labels, anchors = random_batch(rng)
        logits = cosine_logits(Tensor(emb), Tensor(anchors))
        ce = weighted_cross_entropy(logits, labels, (1.0, 1.0)).item()
        assert abs(aam_loss(Tensor(emb), labels, anchors, cfg).item() - ce) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_aam_scale_invariance(seed, factor):
    rng = np.random.default_rng(seed)
    emb, labels, anchors = random_batch(rng)
    i = rng.integers(len(labels))
    scaled = emb.copy()
    scaled[i] *= factor
    a = aam_loss(Tensor(emb), labels, anchors).item()
    b = aam_loss(Tensor(scaled), labels, anchors).item()
    assert abs(a - b) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_aam_monotone_in_target_margin(seed, m_a, m_b):
    rng = np.random.default_rng(seed)
    emb, _, anchors = random_batch(rng, B=1)
    lo, hi = sorted((m_a, m_b))
    loss = [aam_loss(Tensor(emb), [0], anchors, AamConfig(margin_bonafide=m)).item() for m in (lo, hi)]
    assert loss[1] >= loss[0] - 1e-12


def test_aam_extreme_margin_stays_finite():
    anchors = np.array([[1.0, 0.0], [0.0, 1.0]])
    cfg = AamConfig(margin_bonafide=1.0)
    assert np.isfinite(aam_loss(Tensor([[-1.0, 0.1]]), [0], anchors, cfg).item())


def test_aam_errors():
    anchors = np.eye(3)[:, :2]
    with pytest.raises(ValueError):
        aam_loss(Tensor([[0.0, 0.0, 0.0]]), [0], anchors)
    with pytest.raises(ShapeError):
        aam_loss(np.zeros((0, 3)), [], anchors)
    with pytest.raises(ShapeError):
        aam_loss(Tensor(np.ones((1, 4))), [0], anchors)


def test_aam_head_parameter_and_grad():
    rng = np.random.default_rng(4)
    head = AamHead(5, rng)
    assert head.weight.shape == (5, 2)
    emb, labels, _ = random_batch(rng)
    aam_loss(Tensor(emb), labels, head).backward()
    assert head.weight.grad is not None and np.any(head.weight.grad != 0)


@pytest.mark.parametrize("conventional", [False, True])
def test_aam_gradients(conventional):
    rng = np.random.default_rng(5)
    emb, labels, anchors = random_batch(rng)
    # at s=32 a confidently classified sample has gradient ~1e-10, below the
    # central-difference noise floor; a smaller scale keeps every sample unsaturated
    cfg = AamConfig(scale=4.0, conventional_weighting=conventional)
    assert grad_check(lambda t: aam_loss(t, labels, anchors, cfg), emb) < 1e-4
    assert grad_check(lambda t: aam_loss(Tensor(emb), labels, t, cfg), anchors) < 1e-4


# -- relation MSE / composite ---------------------------------------------------

def test_relation_mse_trivial_values():
    mask = np.array([[1, 0], [0, 1], [1, 1]], dtype=float)
    assert relation_mse_loss(Tensor(mask), mask).item() == 0.0
    assert relation_mse_loss(Tensor(np.full((3, 2), 0.5)), mask).item() == 0.25


def test_relation_mse_loop_oracle():
    rng = np.random.default_rng(6)
    N, K = 3, 2
    scores = rng.uniform(size=(N * K, 2 * K))
    mask = rng.integers(0, 2, size=scores.shape)
    total = 0.0
    for i in range(N * K):
        for j in range(2 * K):
            total += (scores[i, j] - mask[i, j]) ** 2
    got = relation_mse_loss(Tensor(scores), mask, n=N, k=K).item()
    assert got == pytest.approx(total / (2 * N * K * K), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_relation_mse_bounded(seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(size=(6, 4))
    mask = rng.integers(0, 2, size=(6, 4))
    assert 0.0 <= relation_mse_loss(Tensor(scores), mask).item() <= 1.0


def test_relation_mse_shape_errors():
    with pytest.raises(ShapeError):
        relation_mse_loss(Tensor(np.zeros((6, 4))), np.zeros((4, 6)))
    with pytest.raises(ShapeError):
        relation_mse_loss(Tensor(np.zeros((6, 4))), np.zeros((6, 4)), n=2, k=2)


def test_relation_mse_gradient():
    rng = np.random.default_rng(7)
    mask = rng.integers(0, 2, size=(6, 4))
    assert grad_check(lambda t: relation_mse_loss(t, mask), rng.uniform(size=(6, 4))) < 1e-4


def test_total_loss_arithmetic():
    assert total_loss(Tensor(0.5), Tensor(0.25), 1.0).item() == 0.75
    assert total_loss(Tensor(0.5), Tensor(0.25), 0.0).item() == 0.5
    with pytest.raises(ValueError):
        total_loss(Tensor(0.5), Tensor(0.25), -1.0)


def test_total_loss_gradient_is_weighted_sum():
    rng = np.random.default_rng(8)
    emb, labels, anchors = random_batch(rng, B=4, d=3)
    W = rng.normal(size=(6, 1))
    mask = rng.integers(0, 2, size=(2, 2))
    lam = 0.7

    def parts(t):
        l_aam = aam_loss(t, labels, anchors)
        pairs = ag.concat([ag.getitem(t, [0, 0, 1, 1]), ag.getitem(t, [2, 3, 2, 3])], axis=1)
        scores = ag.reshape(ag.sigmoid(ag.matmul(pairs, Tensor(W))), (2, 2))
        return l_aam, relation_mse_loss(scores, mask)

    def grads(which):
        x = Tensor(emb, requires_grad=True)
        a, m = parts(x)
        {"aam": a, "mse": m, "total": total_loss(a, m, lam)}[which].backward()
        return x.grad

    np.testing.assert_allclose(grads("total"), grads("aam") + lam * grads("mse"), atol=1e-12)
    assert grad_check(lambda t: total_loss(*parts(t), lam), emb) < 1e-4
