import numpy as np
import pytest

from minispeech import autodiff as ad
from minispeech.autodiff import (
    GradReport,
    ShapeError,
    Tensor,
    conv1d,
    depthwise_conv1d,
    grad_check,
    interp_linear,
    layer_norm,
    log_softmax,
    logsumexp,
    masked_softmax,
    masked_sum,
    matmul,
    no_grad,
    pick,
    softmax,
    take,
)


def test_sum_of_squares_hand_values():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    assert loss.item() == pytest.approx(14.0, abs=0)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_logsumexp_constant_vector_grad_is_half_half():
    for c in (0.0, 3.7, -12.0):
        x = Tensor([c, c], requires_grad=True)
        loss = logsumexp(x)
        loss.backward()
        assert loss.item() == pytest.approx(c + np.log(2.0), rel=1e-15)
        np.testing.assert_allclose(x.grad, [0.5, 0.5], rtol=0, atol=1e-15)


def test_backward_is_bit_identical_across_calls():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

    def run():
        loss = (softmax(matmul(x, w)) * softmax(matmul(x, w))).sum()
        loss.backward()
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_grad_zeroed_per_backward_no_accumulation_across_calls():
    x = Tensor([2.0], requires_grad=True)
    for _ in range(3):
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [4.0])


def test_shape_error_names_offending_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeError) as exc:
        a + b
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)
    with pytest.raises(ShapeError) as exc:
        matmul(a, b)
    assert "(2, 3)" in str(exc.value)


def test_leading_batch_broadcast_add_and_grad():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    out = (a + b).sum()
    out.backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])
    np.testing.assert_array_equal(a.grad, np.ones((4, 3)))


def test_no_grad_blocks_graph_and_detach_is_constant():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._backward is None
    d = (x * 2.0).detach()
    assert not d.requires_grad
    loss = (x * d).sum()
    loss.backward()
    np.testing.assert_array_equal(x.grad, d.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * x).backward()


def test_softmax_rows_sum_to_one_and_log_softmax_finite():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(scale=50.0, size=(6, 11)))
    p = softmax(x)
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    ls = log_softmax(x)
    assert np.isfinite(ls.data).all()
    x_big = Tensor(np.array([[1e4, -1e4, 0.0]]))
    assert np.isfinite(log_softmax(x_big).data).all()


def test_masked_softmax_zeros_disallowed_and_renormalizes():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    mask = np.array([[True, False, True]])
    p = masked_softmax(x, mask).data
    assert p[0, 1] == 0.0
    np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)
    ref = np.exp([1.0, 3.0])
    np.testing.assert_allclose(p[0, [0, 2]], ref / ref.sum(), rtol=1e-12)


def _fd_check(loss_fn, params, tol=1e-6):
    report = grad_check(loss_fn, params)
    assert isinstance(report, GradReport)
    assert report.max_relative_error < tol, (
        f"worst parameter {report.worst()}: {report.max_relative_error}")


def test_grad_check_quadratic_is_tight():
    params = {"x": Tensor([1.5, -0.5, 2.0], requires_grad=True, name="x")}
    report = grad_check(lambda p: (p["x"] * p["x"]).sum(), params)
    assert report.max_relative_error < 1e-8


def test_grad_check_three_layer_mlp():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(4, 5)))
    params = {
        "w1": Tensor(rng.normal(size=(5, 6)) * 0.5, requires_grad=True, name="w1"),
        "b1": Tensor(np.zeros(6), requires_grad=True, name="b1"),
        "w2": Tensor(rng.normal(size=(6, 6)) * 0.5, requires_grad=True, name="w2"),
        "w3": Tensor(rng.normal(size=(6, 3)) * 0.5, requires_grad=True, name="w3"),
    }

    def loss_fn(p):
        h = ad.swish(matmul(x, p["w1"]) + p["b1"])
        h = ad.sigmoid(matmul(h, p["w2"]))
        return (softmax(matmul(h, p["w3"])) * softmax(matmul(h, p["w3"]))).mean()

    _fd_check(loss_fn, params)


def test_grad_check_layer_norm_and_depthwise_conv():
    rng = np.random.default_rng(13)
    params = {
        "x": Tensor(rng.normal(size=(7, 4)), requires_grad=True, name="x"),
        "g": Tensor(1.0 + 0.1 * rng.normal(size=4), requires_grad=True, name="g"),
        "b": Tensor(0.1 * rng.normal(size=4), requires_grad=True, name="b"),
        "wd": Tensor(rng.normal(size=(5, 4)) * 0.3, requires_grad=True, name="wd"),
    }

    def loss_fn(p):
        h = layer_norm(p["x"], p["g"], p["b"])
        h = depthwise_conv1d(h, p["wd"])
        return (h * h).mean()

    _fd_check(loss_fn, params)


def test_grad_check_strided_padded_conv1d():
    rng = np.random.default_rng(17)
    params = {
        "x": Tensor(rng.normal(size=(12, 3)), requires_grad=True, name="x"),
        "w": Tensor(rng.normal(size=(3, 3, 5)) * 0.3, requires_grad=True, name="w"),
    }

    def loss_fn(p):
        h = conv1d(p["x"], p["w"], stride=2, padding=1)
        return (h * h).mean()

    _fd_check(loss_fn, params)
    t_out = (12 + 2 * 1 - 3) // 2 + 1
    assert conv1d(params["x"], params["w"], stride=2, padding=1).shape == (t_out, 5)


def test_grad_check_attention_shaped_graph():
    rng = np.random.default_rng(19)
    T, D = 5, 4
    mask = np.tri(T, dtype=bool)
    params = {
        "x": Tensor(rng.normal(size=(T, D)), requires_grad=True, name="x"),
        "wq": Tensor(rng.normal(size=(D, D)) * 0.4, requires_grad=True, name="wq"),
        "wk": Tensor(rng.normal(size=(D, D)) * 0.4, requires_grad=True, name="wk"),
        "wv": Tensor(rng.normal(size=(D, D)) * 0.4, requires_grad=True, name="wv"),
    }

    def loss_fn(p):
        q = matmul(p["x"], p["wq"])
        k = matmul(p["x"], p["wk"])
        v = matmul(p["x"], p["wv"])
        att = masked_softmax(matmul(q, ad.transpose(k, (1, 0))) * (1.0 / np.sqrt(D)), mask)
        out = matmul(att, v)
        return (out * out).mean()

    _fd_check(loss_fn, params)


def test_grad_check_gather_interp_masked_sum():
    rng = np.random.default_rng(23)
    idx = np.array([2, 0, 1, 2, 2])
    mask = np.array([[True, False], [True, True], [False, False],
                     [True, False], [False, True], [True, True], [True, True]])
    params = {
        "emb": Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="emb"),
    }

    def loss_fn(p):
        rows = take(p["emb"], idx, axis=0)
        up = interp_linear(rows, 7)
        return masked_sum(up * up, mask) * (1.0 / mask.sum())

    _fd_check(loss_fn, params)


def test_grad_check_log_softmax_pick_nll():
    rng = np.random.default_rng(29)
    labels = np.array([1, 3, 0, 2])
    params = {
        "logits": Tensor(rng.normal(size=(4, 5)), requires_grad=True, name="logits"),
    }

    def loss_fn(p):
        return pick(log_softmax(p["logits"]), labels).mean() * -1.0

    _fd_check(loss_fn, params)


def test_take_axis1_matches_numpy_and_grad():
    rng = np.random.default_rng(31)
    table = Tensor(rng.normal(size=(2, 7)), requires_grad=True)
    idx = rng.integers(0, 7, size=(3, 3))
    out = take(table, idx, axis=1)
    np.testing.assert_array_equal(out.data, np.take(table.data, idx, axis=1))
    out.sum().backward()
    expect = np.zeros((2, 7))
    for j in idx.ravel():
        expect[:, j] += 1.0
    np.testing.assert_array_equal(table.grad, expect)


def test_matmul_batched_and_mixed_rank():
    rng = np.random.default_rng(37)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
    c = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    (matmul(a, b) * matmul(a, b)).sum().backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    params = {"a": a, "c": c}
    _fd_check(lambda p: (matmul(p["a"], p["c"]) * matmul(p["a"], p["c"])).mean(), params)


def test_frozen_parameter_gets_exact_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    frozen = Tensor([3.0, 4.0], requires_grad=False)
    loss = (x * frozen).sum()
    loss.backward()
    assert frozen.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_narrow_and_transpose_round_trip_grads():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    y = ad.narrow(x, 1, 1, 2)
    z = ad.transpose(y, (1, 0))
    z.sum().backward()
    expect = np.zeros((3, 4))
    expect[:, 1:3] = 1.0
    np.testing.assert_array_equal(x.grad, expect)


def test_grad_check_flags_wrong_gradient():
    params = {"x": Tensor([1.0, 2.0], requires_grad=True, name="x")}
    calls = {"n": 0}

    def loss_fn(p):
        calls["n"] += 1
        scale = 2.0 if calls["n"] == 1 else 1.0  # analytic pass only
        return (p["x"] * p["x"]).sum() * scale

    report = grad_check(loss_fn, params)
    assert report.max_relative_error > 0.4
