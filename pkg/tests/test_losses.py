import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d3a.discrepancy import KernelSpec, MmdResult
from d3a.errors import InvalidInputError
from d3a.losses import SourceBatch, boundary_loss, classification_loss, total_loss
from d3a.numkit import Rng, finite_diff_grad, max_relative_error


def test_ce_uniform_two_classes():
    loss, _ = classification_loss([[0.0, 0.0]], [1])
    assert loss == pytest.approx(math.log(2.0), abs=1e-15)


def test_ce_perfect_prediction():
    loss, _ = classification_loss([[1000.0, 0.0]], [0])
    assert loss == 0.0


def test_ce_monotone_in_true_logit():
    a, _ = classification_loss([[0.5, 1.0, -1.0]], [0])
    b, _ = classification_loss([[0.9, 1.0, -1.0]], [0])
    assert b < a


@pytest.mark.parametrize("labels", [[2], [-1]])
def test_ce_rejects_bad_label(labels):
    with pytest.raises(InvalidInputError):
        classification_loss([[0.0, 1.0]], labels)


def test_boundary_examples():
    assert boundary_loss([[2.0, 0.5]], [0], 1.0)[0] == 0.0
    assert boundary_loss([[0.5, 2.0]], [0], 1.0)[0] == pytest.approx(2.5, abs=1e-15)


def test_boundary_zero_margin_satisfied():
    assert boundary_loss([[3.0, 1.0, 2.9]], [0], 0.0)[0] == 0.0


def test_boundary_true_class_flag_adds_margin():
    a = boundary_loss([[0.5, 2.0]], [0], 1.0)[0]
    b = boundary_loss([[0.5, 2.0]], [0], 1.0, include_true_class=True)[0]
    assert b == pytest.approx(a + 1.0)


def test_boundary_rejects_negative_margin():
    with pytest.raises(InvalidInputError):
        boundary_loss([[0.0, 1.0]], [0], -0.1)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-100, 100),
       st.integers(0, 2))
def test_boundary_translation_invariant(row, c, y):
    a = boundary_loss([row], [y], 0.7)[0]
    b = boundary_loss([[v + c for v in row]], [y], 0.7)[0]
    assert b == pytest.approx(a, abs=1e-9)


@pytest.mark.parametrize("include", [False, True])
def test_boundary_gradient_fd(include):
    rng = Rng(4)
    L = rng.normal((6, 4)) * 2
    y = np.array([0, 1, 2, 3, 0, 1])
    _, g = boundary_loss(L, y, 0.8, 0.6, include)
    fd = finite_diff_grad(lambda v: boundary_loss(v.reshape(L.shape), y, 0.8, 0.6, include)[0],
                          L.ravel(), 1e-7)
    assert max_relative_error(g.ravel(), fd, 1e-6) <= 1e-5


def test_ce_gradient_fd():
    rng = Rng(5)
    L = rng.normal((5, 3))
    y = np.array([0, 1, 2, 1, 0])
    _, g = classification_loss(L, y)
    fd = finite_diff_grad(lambda v: classification_loss(v.reshape(L.shape), y)[0], L.ravel(), 1e-6)
    assert max_relative_error(g.ravel(), fd, 1e-8) <= 1e-6


def _toy():
    s1 = SourceBatch(np.array([[2.0, 0.0], [0.0, 1.0]]), np.array([0, 0]), np.zeros((2, 2)))
    s2 = SourceBatch(np.array([[0.0, 3.0]]), np.array([1]), np.ones((1, 2)))
    mmd = [MmdResult(0.2, np.zeros((2, 2)), np.zeros((3, 2))),
           MmdResult(0.5, np.zeros((1, 2)), np.zeros((3, 2)))]
    return [s1, s2], mmd


def test_total_hand_ledger():
    sources, mmd = _toy()
    tl_logits, tl_y = np.array([[0.0, 0.0]]), np.array([0])
    r = total_loss(sources, np.zeros((3, 2)), [0.8, 0.4], beta=0.5, margin=1.0, spec=None,
                   tl_logits=tl_logits, tl_labels=tl_y, mmd_values=mmd)
    clf1 = (math.log(1 + math.exp(-2.0)) + math.log(1 + math.exp(1.0))) / 2
    clf2 = math.log(1 + math.exp(-3.0))
    # hinge, source 1: row 1 -> max(0, 0-2+1)=0, row 2 -> max(0, 1-0+1)=2; mean 1; times 0.8
    # hinge, source 2: max(0, 0-3+1)=0
    dis1, dis2 = 0.8 * 1.0, 0.0
    expected = 0.8 * (clf1 + 0.5 * 0.2) + 0.4 * (clf2 + 0.5 * 0.5) + dis1 + dis2 + math.log(2)
    assert r.dis == pytest.approx([dis1, dis2], abs=1e-15)
    assert r.total == pytest.approx(expected, abs=1e-12)


def test_total_term_isolation():
    sources, mmd = _toy()
    r = total_loss(sources, np.zeros((3, 2)), [0.8, 0.4], beta=0.0, margin=0.0, spec=None,
                   mmd_values=mmd)
    wanted = 0.8 * r.clf[0] + 0.4 * r.clf[1] + r.dis[0] + r.dis[1]
    assert r.total == pytest.approx(wanted, abs=1e-15)
    assert r.clf_tl == 0.0


def test_total_ablation_identity():
    sources, mmd = _toy()
    r = total_loss(sources, np.zeros((3, 2)), [1.0, 1.0], beta=0.0, margin=1.0, spec=None,
                   lambda_dis=0.0, mmd_values=mmd)
    assert r.total == pytest.approx(r.clf[0] + r.clf[1], abs=1e-15)


def test_total_beta_only_scales_mmd():
    sources, mmd = _toy()
    args = dict(margin=1.0, spec=None, mmd_values=mmd)
    r0 = total_loss(sources, np.zeros((3, 2)), [0.8, 0.4], beta=0.0, **args)
    r3 = total_loss(sources, np.zeros((3, 2)), [0.8, 0.4], beta=3.0, **args)
    assert r3.total - r0.total == pytest.approx(3.0 * (0.8 * 0.2 + 0.4 * 0.5), abs=1e-12)


def test_total_linear_in_omega():
    rng = Rng(9)
    sources = [SourceBatch(rng.normal((4, 3)), np.array([0, 1, 2, 0]), rng.normal((4, 2)))
               for _ in range(2)]
    zt = rng.normal((5, 2))
    spec = KernelSpec((1.0, 2.0))

    def tot(w):
        return total_loss(sources, zt, w, 0.7, 0.5, spec).total

    a, b, mid = tot([0.2, 1.0]), tot([1.4, 1.0]), tot([0.8, 1.0])
    assert mid == pytest.approx((a + b) / 2, abs=1e-12)


def test_total_output_gradients_fd():
    rng = Rng(13)
    labels = [np.array([0, 1, 2]), np.array([2, 2, 1, 0])]
    logits = [rng.normal((3, 3)), rng.normal((4, 3))]
    zs = [rng.normal((3, 2)), rng.normal((4, 2))]
    zt = rng.normal((5, 2))
    tl, tly = rng.normal((2, 3)), np.array([1, 0])
    spec = KernelSpec((0.7, 2.1))
    w = [0.9, 0.3]
    shapes = [a.shape for a in logits + zs + [zt, tl]]

    def unpack(v):
        out, k = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(v[k:k + n].reshape(s))
            k += n
        return out

    def f(v):
        l1, l2, z1, z2, t, tlg = unpack(v)
        srcs = [SourceBatch(l1, labels[0], z1), SourceBatch(l2, labels[1], z2)]
        return total_loss(srcs, t, w, 0.5, 1.0, spec, tl_logits=tlg, tl_labels=tly).total

    r = total_loss([SourceBatch(logits[i], labels[i], zs[i]) for i in range(2)], zt, w, 0.5,
                   1.0, spec, tl_logits=tl, tl_labels=tly)
    g = np.concatenate([x.ravel() for x in r.grad_source_logits + r.grad_source_z
                        + [r.grad_target_z, r.grad_tl_logits]])
    v0 = np.concatenate([a.ravel() for a in logits + zs + [zt, tl]])
    assert max_relative_error(g, finite_diff_grad(f, v0, 1e-6), 1e-4) <= 1e-5


def test_total_rejects_empty():
    with pytest.raises(InvalidInputError):
        total_loss([], None, [], 0.5, 1.0, None)


def test_total_components_nonnegative():
    rng = Rng(1)
    sources = [SourceBatch(rng.normal((4, 3)), np.array([0, 1, 2, 0]), rng.normal((4, 2)))]
    r = total_loss(sources, rng.normal((3, 2)), [0.5], 0.5, 1.0, KernelSpec((1.0,)))
    assert min(r.clf + r.mmd + r.dis) >= 0 and r.total >= 0
