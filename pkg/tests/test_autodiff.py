import numpy as np
import pytest

import sonogen.autodiff as ad
from sonogen.errors import NumericsError, ShapeError


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


def test_softmax_symmetry():
    out = ad.softmax(ad.Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_relu_values():
    assert ad.relu(ad.Tensor(-3.0)).data == 0.0
    assert ad.relu(ad.Tensor(2.0)).data == 2.0


def test_cosine_identity():
    v = ad.Tensor([1.0, -2.0, 0.5])
    assert abs(float(ad.cosine_similarity(v, v).data) - 1.0) < 1e-6


def test_linear_loss_grad_is_other_factor():
    w = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x = ad.Tensor([4.0, 5.0, 6.0])
    loss = ad.mean(ad.mul(w, x)) * 3.0  # sum(w*x)
    ad.backward(loss)
    assert np.allclose(w.grad, x.data, atol=1e-6)


def test_relu_dead_unit_grad():
    w = ad.Tensor(-1.0, requires_grad=True)
    loss = ad.relu(w)
    ad.backward(loss)
    assert w.grad == 0.0


def test_backward_requires_scalar():
    w = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(w, 2.0))


def test_grad_accumulation_matches_separate_backwards():
    rng = rng_for(0)
    data = rng.normal(size=(4, 3)).astype(np.float32)
    w1 = ad.Tensor(data, requires_grad=True)
    loss1 = ad.mean(ad.relu(w1))
    loss2 = ad.mean(ad.mul(w1, w1))
    ad.backward(ad.add(loss1, loss2))
    combined = w1.grad.copy()

    w2 = ad.Tensor(data, requires_grad=True)
    ad.backward(ad.mean(ad.relu(w2)))
    g1 = w2.grad.copy()
    w2.zero_grad()
    ad.backward(ad.mean(ad.mul(w2, w2)))
    g2 = w2.grad.copy()
    assert np.allclose(combined, g1 + g2, atol=1e-6)


def test_no_grad_blocks_recording():
    w = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        out = ad.mul(w, 3.0)
    assert not out.requires_grad and out._parents == ()


def test_softmax_rows_sum_to_one():
    x = ad.Tensor(rng_for(1).normal(size=(5, 7)).astype(np.float32) * 10)
    out = ad.softmax(x, axis=-1).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((out > 0) & (out < 1))


def test_layer_norm_statistics():
    x = ad.Tensor(rng_for(2).normal(size=(6, 16)).astype(np.float32) * 2 + 1)
    gamma = ad.Tensor(np.ones(16, dtype=np.float32))
    beta = ad.Tensor(np.zeros(16, dtype=np.float32))
    out = ad.layer_norm(x, gamma, beta).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


def conv2d_reference(x, w, b, stride, pad):
    batch, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (width + 2 * pad - kw) // stride + 1
    out = np.zeros((batch, cout, ho, wo), dtype=np.float64)
    for n in range(batch):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_nested_loops(stride, pad):
    rng = rng_for(3)
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), stride=stride, pad=pad)
    ref = conv2d_reference(x, w, b, stride, pad)
    assert np.allclose(out.data, ref, atol=1e-5)


def const(rng, *shape):
    return ad.Tensor(rng.normal(size=shape).astype(np.float32))


def build_case(name, rng):
    """Return (pure function of one tensor, probe point) with frozen constants."""
    if name == "add":
        c = const(rng, 3)
        return lambda x: ad.add(x, c), rng.normal(size=(2, 3))
    if name == "add_scalar":
        return lambda x: ad.add(x, 1.5), rng.normal(size=(4,))
    if name == "mul":
        c = const(rng, 2, 3)
        return lambda x: ad.mul(x, c), rng.normal(size=(2, 3))
    if name == "matmul_left":
        c = const(rng, 3, 4)
        return lambda x: ad.matmul(x, c), rng.normal(size=(2, 3))
    if name == "matmul_right":
        c = const(rng, 2, 3)
        return lambda x: ad.matmul(c, x), rng.normal(size=(3, 4))
    if name == "matmul_batched":
        c = const(rng, 2, 4, 3)
        return lambda x: ad.matmul(x, c), rng.normal(size=(2, 3, 4))
    if name == "relu":
        point = rng.normal(size=(3, 3))
        point += np.where(point > 0, 0.3, -0.3)  # stay away from the kink
        return ad.relu, point
    if name == "softmax":
        return lambda x: ad.softmax(x, axis=-1), rng.normal(size=(2, 5))
    if name == "log":
        return ad.log, np.abs(rng.normal(size=(4,))) + 0.5
    if name == "exp":
        return ad.exp, rng.normal(size=(4,))
    if name == "layer_norm":
        gamma, beta = const(rng, 6), const(rng, 6)
        return lambda x: ad.layer_norm(x, gamma, beta), rng.normal(size=(3, 6)) * 2
    if name == "conv2d":
        w, b = const(rng, 2, 2, 3, 3), const(rng, 2)
        return lambda x: ad.conv2d(x, w, b, stride=2, pad=1), rng.normal(size=(1, 2, 6, 6))
    if name == "avg_pool":
        return lambda x: ad.avg_pool(x, 2), rng.normal(size=(1, 2, 4, 4))
    if name == "embedding_lookup":
        ids = np.array([[0, 2], [1, 1]])
        return lambda x: ad.embedding_lookup(x, ids), rng.normal(size=(4, 5))
    if name == "concat":
        c = const(rng, 2, 3)
        return lambda x: ad.concat([x, c], axis=1), rng.normal(size=(2, 2))
    if name == "reshape":
        return lambda x: ad.reshape(x, (3, 2)), rng.normal(size=(2, 3))
    if name == "transpose":
        return lambda x: ad.transpose(x, (1, 0)), rng.normal(size=(2, 3))
    if name == "mean":
        return lambda x: ad.mean(x, axis=1), rng.normal(size=(3, 4))
    if name == "cosine_similarity":
        c = ad.Tensor((rng.normal(size=(2, 4)) + 2).astype(np.float32))
        return lambda x: ad.cosine_similarity(x, c), rng.normal(size=(2, 4)) + 2
    if name == "cross_entropy":
        targets = np.array([1, 0, 2])
        return lambda x: ad.cross_entropy(x, targets), rng.normal(size=(3, 4))
    raise KeyError(name)


PRIMITIVE_NAMES = [
    "add", "add_scalar", "mul", "matmul_left", "matmul_right", "matmul_batched",
    "relu", "softmax", "log", "exp", "layer_norm", "conv2d", "avg_pool",
    "embedding_lookup", "concat", "reshape", "transpose", "mean",
    "cosine_similarity", "cross_entropy",
]


@pytest.mark.parametrize("name", PRIMITIVE_NAMES)
def test_primitive_gradients_match_finite_differences(name):
    for seed in range(10):
        rng = rng_for(1000 + seed)
        fn, point = build_case(name, rng)
        weight = {}

        def scalar_f(x):
            out = fn(x)
            if "w" not in weight:
                weight["w"] = rng.normal(size=out.shape).astype(np.float32)
            return ad.mean(ad.mul(out, ad.Tensor(weight["w"]))) * float(out.data.size)

        err = ad.finite_diff_check(scalar_f, np.asarray(point, dtype=np.float32), eps=1e-3)
        assert err < 1e-4, f"{name} seed {seed}: finite-diff error {err:.2e}"


def test_finite_diff_check_polynomial():
    err = ad.finite_diff_check(lambda x: ad.mul(x, x), np.array(3.0), eps=1e-3)
    assert err < 1e-6


def test_finite_diff_raises_on_nonfinite():
    def f(x):
        return ad.mul(x, float("inf"))

    with pytest.raises(NumericsError):
        ad.finite_diff_check(f, np.array(1.0))


def test_abs_subgradient_at_kink_in_range():
    # |x| = relu(x) + relu(-x); at 0 any value in [-1, 1] is acceptable.
    w = ad.Tensor(0.0, requires_grad=True)
    loss = ad.add(ad.relu(w), ad.relu(ad.mul(w, -1.0)))
    ad.backward(loss)
    assert -1.0 <= float(w.grad) <= 1.0


def test_log_floor_keeps_values_finite():
    out = ad.log(ad.Tensor([0.0, -5.0, 1.0]))
    assert np.all(np.isfinite(out.data))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))


def test_trailing_broadcast_only():
    with pytest.raises(ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 1))))


def test_embedding_lookup_forward_and_ids():
    table = ad.Tensor(np.arange(12, dtype=np.float32).reshape(4, 3), requires_grad=True)
    out = ad.embedding_lookup(table, np.array([3, 0]))
    assert np.allclose(out.data, [[9, 10, 11], [0, 1, 2]])
    ad.backward(ad.mean(out) * 6.0)
    assert np.allclose(table.grad.sum(), 6.0)
