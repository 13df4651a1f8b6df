import numpy as np
import pytest

from diffocr import autograd as ag
from diffocr.autograd import Tensor


def fd_grad(loss_fn, tensors, step=1e-6):
    """Central finite differences of loss_fn() w.r.t. every tensor coordinate."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gf[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def check_op(build_loss, tensors, tol=1e-7):
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.grad = None
    with ag.no_grad():
        numeric = fd_grad(lambda: build_loss().item(), tensors)
    for ga, gn in zip(analytic, numeric):
        np.testing.assert_allclose(ga, gn, rtol=tol, atol=tol)


def weighted_sum(out, rng):
    w = Tensor(rng.standard_normal(out.shape))
    return ag.reshape(ag.mul(out, w), (1, out.data.size)) @ Tensor(np.ones((out.data.size, 1)))


def rand_tensor(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_mul_broadcast():
    rng = np.random.default_rng(0)
    a = rand_tensor(rng, (3, 4))
    b = rand_tensor(rng, (4,))
    c = rand_tensor(rng, (3, 1))
    check_op(lambda: weighted_sum(ag.mul(ag.add(a, b), c), np.random.default_rng(1)), [a, b, c])


def test_matmul_2d_and_batched():
    rng = np.random.default_rng(2)
    a = rand_tensor(rng, (5, 3))
    w = rand_tensor(rng, (3, 4))
    check_op(lambda: weighted_sum(ag.matmul(a, w), np.random.default_rng(3)), [a, w])
    q = rand_tensor(rng, (2, 2, 4, 3))
    k = rand_tensor(rng, (2, 2, 3, 4))
    check_op(lambda: weighted_sum(ag.matmul(q, k), np.random.default_rng(4)), [q, k])


def test_reshape_transpose():
    rng = np.random.default_rng(5)
    a = rand_tensor(rng, (2, 3, 4))
    check_op(lambda: weighted_sum(
        ag.reshape(ag.transpose(a, (2, 0, 1)), (4, 6)), np.random.default_rng(6)), [a])


def test_gelu():
    rng = np.random.default_rng(7)
    a = rand_tensor(rng, (4, 5))
    check_op(lambda: weighted_sum(ag.gelu(a), np.random.default_rng(8)), [a], tol=1e-6)


def test_layernorm():
    rng = np.random.default_rng(9)
    a = rand_tensor(rng, (3, 8))
    check_op(lambda: weighted_sum(ag.layernorm(a), np.random.default_rng(10)), [a], tol=1e-6)
    out = ag.layernorm(a).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1, atol=1e-4)


def test_masked_softmax_rows_and_grad():
    rng = np.random.default_rng(11)
    s = rand_tensor(rng, (2, 1, 4, 4))
    allowed = np.ones((2, 1, 4, 4), dtype=bool)
    allowed[:, :, :, 2] = False
    allowed[:, :, 2, 2] = True  # diagonal stays reachable
    p = ag.masked_softmax(s, allowed).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    assert np.all(p[:, :, [0, 1, 3], 2] == 0.0)
    check_op(lambda: weighted_sum(ag.masked_softmax(s, allowed), np.random.default_rng(12)),
             [s], tol=1e-6)


def test_embedding_scatter_grad():
    rng = np.random.default_rng(13)
    table = rand_tensor(rng, (6, 3))
    ids = np.array([[0, 2, 2], [5, 0, 1]])
    check_op(lambda: weighted_sum(ag.embedding(table, ids), np.random.default_rng(14)), [table])


def test_cross_entropy_matches_manual():
    rng = np.random.default_rng(15)
    logits = rand_tensor(rng, (7, 5))
    targets = np.array([0, 1, 4, 2, 2, 3, 0])
    loss = ag.cross_entropy_mean(logits, targets)
    p = ag.softmax_np(logits.data)
    manual = -np.log(p[np.arange(7), targets]).mean()
    assert abs(loss.item() - manual) < 1e-12
    check_op(lambda: ag.cross_entropy_mean(logits, targets), [logits], tol=1e-6)


def test_grad_accumulates_over_reuse():
    a = Tensor(np.array([[2.0]]), requires_grad=True)
    loss = ag.add(ag.mul(a, 3.0), ag.mul(a, a))
    loss.backward()
    np.testing.assert_allclose(a.grad, [[3.0 + 2 * 2.0]])


def test_no_grad_builds_no_tape():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with ag.no_grad():
        out = ag.mul(a, a)
    assert not out.requires_grad and out._backward is None


def test_backward_requires_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        ag.mul(a, 2.0).backward()
