import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dhhqa import nn
from dhhqa.nn import Tensor, check_grads

FD_TOL = 1e-4


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


# ---------------------------------------------------------------- forward ops

def test_softmax_of_zeros_is_uniform():
    out = nn.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_layer_norm_standardises():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((4, 17)) * 5 + 3)
    y = nn.layer_norm(x).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-6)
    # eps=1e-5 shrinks the variance very slightly below one
    np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-6)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((3, 2))
    out = nn.matmul(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(out, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_batched_matmul_with_shared_weight():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 4, 5))
    w = rng.standard_normal((5, 2))
    out = nn.matmul(Tensor(a), Tensor(w)).data
    for i in range(3):
        np.testing.assert_allclose(out[i], naive_matmul(a[i], w), atol=1e-12)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        nn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match="incompatible"):
        nn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_mean_pool_examples():
    np.testing.assert_array_equal(nn.mean_pool(Tensor(np.full((5, 3), 2.5))).data, [2.5] * 3)
    np.testing.assert_array_equal(nn.mean_pool(Tensor([[1.0, 3.0], [3.0, 5.0]])).data, [2.0, 4.0])
    with pytest.raises(ValueError):
        nn.mean_pool(Tensor(np.zeros((0, 3))))


def test_concat_and_broadcast():
    a = Tensor(np.ones((2, 1, 3)))
    b = Tensor(np.zeros((2, 4, 3)))
    assert nn.concat([a, b], axis=1).shape == (2, 5, 3)
    assert nn.broadcast_to(Tensor(np.ones((1, 1, 3))), (4, 1, 3)).shape == (4, 1, 3)
    with pytest.raises(ValueError):
        nn.concat([a, Tensor(np.zeros((3, 4, 3)))], axis=1)


def test_gelu_known_values():
    out = nn.gelu(Tensor([0.0, 1.0, -1.0])).data
    # x * Phi(x) with Phi(1) = 0.8413447460685429
    np.testing.assert_allclose(out, [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-12)


# ----------------------------------------------------------- finite differences

SHAPES = [(3,), (2, 4), (3, 1, 5), (2, 3, 4), (1, 6, 2)]


UNARY = {
    "gelu": lambda x: nn.gelu(x),
    "softmax": lambda x: nn.softmax(x, axis=-1),
    "layer_norm": lambda x: nn.layer_norm(x),
    "mean": lambda x: nn.mean(x, axis=-1, keepdims=True) * x,
    "sum": lambda x: nn.tsum(x, axis=0, keepdims=True) * x,
    "transpose": lambda x: nn.transpose(x),
    "reshape": lambda x: nn.reshape(x, (-1,)),
    "square": lambda x: x ** 2,
    "poly": lambda x: x * x * 0.5 - x,
}


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", sorted(UNARY))
def test_unary_ops_pass_gradcheck(op, shape):
    rng = np.random.default_rng(zlib.crc32(f"{op}{shape}".encode()))
    x = leaf(rng, *shape)
    # random output weights so the scalar loss exercises every output entry
    w = Tensor(rng.standard_normal(UNARY[op](x).shape))
    errs = check_grads(lambda: (UNARY[op](x) * w).sum(), {"x": x})
    assert errs["x"] < FD_TOL, errs


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_affine_gradcheck(seed):
    rng = np.random.default_rng(seed)
    shape = [(4, 6), (2, 3, 5), (7,), (1, 2, 8), (3, 4)][seed]
    x = leaf(rng, *shape)
    g = leaf(rng, shape[-1])
    b = leaf(rng, shape[-1])
    w = Tensor(rng.standard_normal(shape))
    errs = check_grads(lambda: (nn.layer_norm(x, g, b) * w).sum(), {"x": x, "g": g, "b": b})
    assert max(errs.values()) < FD_TOL, errs


@pytest.mark.parametrize("shapes", [((2, 3), (3, 4)), ((2, 5, 3), (3, 2)), ((2, 2, 4, 3), (2, 2, 3, 5)),
                                    ((1, 4), (4, 1)), ((3, 2, 2), (3, 2, 6))])
def test_matmul_gradcheck(shapes):
    rng = np.random.default_rng(len(str(shapes)))
    a = leaf(rng, *shapes[0])
    b = leaf(rng, *shapes[1])
    out_shape = np.matmul(a.data, b.data).shape
    w = Tensor(rng.standard_normal(out_shape))
    errs = check_grads(lambda: (nn.matmul(a, b) * w).sum(), {"a": a, "b": b})
    assert max(errs.values()) < FD_TOL, errs


@pytest.mark.parametrize("seed", range(5))
def test_broadcast_add_mul_gradcheck(seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng, 3, 4, 5)
    b = leaf(rng, 4, 1)
    c = leaf(rng, 1, 1, 5)
    w = Tensor(rng.standard_normal((3, 4, 5)))
    errs = check_grads(lambda: ((nn.add(a, b) * c - b) * w).sum(), {"a": a, "b": b, "c": c})
    assert max(errs.values()) < FD_TOL, errs


@pytest.mark.parametrize("seed", range(5))
def test_shape_ops_gradcheck(seed):
    rng = np.random.default_rng(100 + seed)
    cls = leaf(rng, 1, 1, 4)
    x = leaf(rng, 2, 3, 4)
    pos = leaf(rng, 1, 4, 4)
    w = Tensor(rng.standard_normal((2, 3, 4)))

    def f():
        h = nn.concat([nn.broadcast_to(cls, (2, 1, 4)), x], axis=1)
        h = nn.embedding_add(h, pos)
        h = nn.swapaxes(h, 1, 2).reshape(2, 16)
        h = nn.reshape(h, (2, 4, 4)).transpose(0, 2, 1)
        return (nn.gelu(h[:, 1:, :]) * w).sum()

    errs = check_grads(f, {"cls": cls, "x": x, "pos": pos})
    assert max(errs.values()) < FD_TOL, errs


def test_mean_pool_gradient_is_uniform():
    rng = np.random.default_rng(3)
    f = leaf(rng, 5, 4)
    nn.mean_pool(f).sum().backward()
    np.testing.assert_allclose(f.grad, np.full((5, 4), 1 / 5), atol=1e-15)
    errs = check_grads(lambda: nn.mean_pool(f).sum(), {"f": f})
    assert errs["f"] < FD_TOL


def test_fancy_index_gradient_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    nn.getitem(x, np.array([0, 0, 2])).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 0, 1, 0])


# --------------------------------------------------------------------- backward

def test_linear_loss_gradient_is_outer_product():
    rng = np.random.default_rng(4)
    W = leaf(rng, 3, 4)
    x = Tensor(rng.standard_normal((4, 1)))
    nn.matmul(W, x).sum().backward()
    np.testing.assert_allclose(W.grad, np.outer(np.ones(3), x.data[:, 0]), atol=1e-15)
    assert check_grads(lambda: nn.matmul(W, x).sum(), {"W": W})["W"] < FD_TOL


def test_disconnected_leaf_has_zero_grad():
    rng = np.random.default_rng(5)
    x = leaf(rng, 3)
    unused = leaf(rng, 2)
    (x * x).sum().backward()
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


def test_reused_tensor_gradients_sum():
    # f = sum(x*x + 3x) has gradient 2x + 3
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    (x * x + x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3, atol=1e-15)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with nn.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(9)
        a = Tensor(rng.standard_normal((4, 8)))
        b = Tensor(rng.standard_normal((8, 8)))
        return nn.softmax(nn.layer_norm(nn.gelu(nn.matmul(a, b)))).data

    assert run().tobytes() == run().tobytes()


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(arr):
    y = nn.softmax(Tensor(arr), axis=-1).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)


# ------------------------------------------------------------------ optimiser

def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = nn.Adam({"p": p}, lr=0.1)
    (p * np.array([2.0, -3.0])).sum().backward()
    opt.step()
    # bias-corrected first step is lr * sign(g) (up to eps)
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-7)


def test_adam_zero_grad_leaves_params():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = nn.Adam({"p": p}, lr=0.1)
    opt.zero_grad()
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


# ----------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    params = {"a.w": Tensor(rng.standard_normal((3, 4)).astype(np.float32)),
              "b": Tensor(rng.standard_normal(5).astype(np.float32))}
    nn.save_checkpoint(tmp_path / "m.ckpt", params, meta={"k": 1})
    loaded, meta = nn.load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"k": 1}
    assert list(loaded) == ["a.w", "b"]
    for k in params:
        assert loaded[k].data.tobytes() == params[k].data.tobytes()


def test_checkpoint_rejects_truncation(tmp_path):
    params = {"w": Tensor(np.ones((2, 2), dtype=np.float32))}
    nn.save_checkpoint(tmp_path / "m.ckpt", params)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated"):
        nn.load_checkpoint(tmp_path / "bad.ckpt")
