import numpy as np
import pytest

from d3a import model as mdl
from d3a.errors import ContractViolationError, InvalidInputError, ParseError
from d3a.losses import classification_loss
from d3a.numkit import Rng, finite_diff_grad, max_relative_error


def test_init_deterministic():
    a = mdl.init((2, 8, 4, 3), Rng(11))
    b = mdl.init((2, 8, 4, 3), Rng(11))
    np.testing.assert_array_equal(a.flatten(), b.flatten())


def test_init_zero_biases_and_bounded_weights():
    p = mdl.init((5, 16, 6, 3), Rng(2))
    for name in ("b1", "b2", "bc"):
        assert not p[name].any()
    for name in ("W1", "W2", "P1", "P2", "Wc"):
        w = p[name]
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.abs(w).max() <= limit
        assert np.abs(w).max() > 0.5 * limit


@pytest.mark.parametrize("dims", [(0, 2, 2, 2), (2, -1, 2, 2), (2, 2, 2)])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(InvalidInputError):
        mdl.init(dims, Rng(0))


def test_flat_roundtrip():
    p = mdl.init((3, 7, 5, 4), Rng(9))
    q = p.unflatten(p.flatten())
    for a, b in zip(p.arrays, q.arrays):
        np.testing.assert_array_equal(a, b)


def test_zero_input_propagation():
    p = mdl.init((3, 6, 4, 3), Rng(1))
    p.arrays[7][:] = [0.3, -0.2, 0.1]
    c = mdl.forward(p, np.zeros((5, 3)))
    assert not c.features.any() and not c.z.any()
    np.testing.assert_array_equal(c.logits, np.tile([0.3, -0.2, 0.1], (5, 1)))


def test_output_shapes():
    p = mdl.init((3, 6, 4, 5), Rng(1))
    c = mdl.forward(p, np.ones((7, 3)))
    assert c.features.shape == (7, 4) and c.z.shape == (7, 4) and c.logits.shape == (7, 5)


def test_forward_rejects_wrong_width():
    p = mdl.init((3, 6, 4, 5), Rng(1))
    with pytest.raises(InvalidInputError):
        mdl.forward(p, np.ones((2, 4)))


def _tiny_net():
    I = np.eye(2)
    arrays = [np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([0.5, 0.0]),
              np.array([[1.0, 0.0], [-1.0, 1.0]]), np.array([0.0, 0.1]),
              I.copy(), np.array([[1.0, 2.0], [0.0, 1.0]]),
              np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([0.1, -0.1])]
    return mdl.ModelParams((2, 2, 2, 2), arrays)


def test_tiny_net_hand_computed():
    # x = (1, 1):
    #   a1 = (1+2+0.5, -1+0.5+0) = (3.5, -0.5) -> h1 = (3.5, 0)
    #   a2 = (3.5, 0.1) -> f = (3.5, 0.1)
    #   b = f @ I = (3.5, 0.1) -> r = (3.5, 0.1); z = r @ [[1,2],[0,1]] = (3.5, 7.1)
    #   logits = (3.5 + 3.55 + 0.1, -3.5 + 14.2 - 0.1) = (7.15, 10.6)
    c = mdl.forward(_tiny_net(), np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(c.features, [[3.5, 0.1]], atol=1e-12)
    np.testing.assert_allclose(c.z, [[3.5, 7.1]], atol=1e-12)
    np.testing.assert_allclose(c.logits, [[7.15, 10.6]], atol=1e-12)


def test_forward_deterministic():
    p = mdl.init((4, 8, 4, 3), Rng(3))
    X = Rng(4).normal((10, 4))
    np.testing.assert_array_equal(mdl.forward(p, X).logits, mdl.forward(p, X).logits)


def test_zero_output_grads_give_zero_param_grads():
    p = mdl.init((4, 8, 4, 3), Rng(3))
    c = mdl.forward(p, Rng(4).normal((6, 4)))
    grads = mdl.backward(p, [c], [{"logits": np.zeros((6, 3)), "z": np.zeros((6, 4))}])
    assert all(not g.any() for g in grads)


def test_stale_cache_rejected():
    p = mdl.init((4, 8, 4, 3), Rng(3))
    c = mdl.forward(p, Rng(4).normal((6, 4)))
    q = p.unflatten(p.flatten())
    with pytest.raises(ContractViolationError):
        mdl.backward(q, [c], [{"logits": np.zeros((6, 3))}])


@pytest.mark.parametrize("use_head", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed, use_head):
    rng = Rng(seed)
    p = mdl.init((3, 12, 5, 4), rng, use_head=use_head)
    p.arrays[1][:] = rng.uniform(-0.1, 0.1, 12)
    p.arrays[3][:] = rng.uniform(0.05, 0.1, 5)  # keep feature rows off the all-zero kink
    X = rng.normal((9, 3))
    y = (np.arange(9) % 4)
    zw = rng.normal((9, 5))

    def loss(params):
        c = mdl.forward(params, X)
        return classification_loss(c.logits, y)[0] + 0.3 * float(np.sum(c.z * zw))

    c = mdl.forward(p, X)
    assert mdl.min_abs_preactivation(c) > 1e-6
    _, gl = classification_loss(c.logits, y)
    g = np.concatenate([a.ravel() for a in mdl.backward(p, [c], [{"logits": gl, "z": 0.3 * zw}])])
    fd = finite_diff_grad(lambda v: loss(p.unflatten(v)), p.flatten(), 1e-6)
    assert max_relative_error(g, fd, floor=1e-6) <= 1e-4


def test_duplicated_batch_mean_gradient_unchanged():
    rng = Rng(8)
    p = mdl.init((3, 10, 4, 3), rng)
    X = rng.normal((6, 3))
    y = np.array([0, 1, 2, 0, 1, 2])

    def grad(X, y):
        c = mdl.forward(p, X)
        _, gl = classification_loss(c.logits, y)
        return np.concatenate([a.ravel() for a in mdl.backward(p, [c], [{"logits": gl}])])

    np.testing.assert_allclose(grad(np.vstack([X, X]), np.concatenate([y, y])), grad(X, y),
                               atol=1e-10)


def test_checkpoint_roundtrip(tmp_path):
    for use_head in (True, False):
        p = mdl.init((4, 9, 5, 3), Rng(21), use_head=use_head)
        path = tmp_path / f"m{use_head}.txt"
        mdl.save_checkpoint(p, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "d3a-model v1"
        q = mdl.load_checkpoint(path)
        assert q.dims == p.dims and q.use_head == use_head
        np.testing.assert_array_equal(q.flatten(), p.flatten())


def test_checkpoint_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("something else\n1 1 1 1\n")
    with pytest.raises(ParseError):
        mdl.load_checkpoint(path)


def test_checkpoint_bad_value_names_line(tmp_path):
    p = mdl.init((2, 2, 2, 2), Rng(0))
    path = tmp_path / "m.txt"
    mdl.save_checkpoint(p, path)
    lines = path.read_text().splitlines()
    lines[4] = "oops"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=":5"):
        mdl.load_checkpoint(path)
