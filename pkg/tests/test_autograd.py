"""Tensor graph semantics, op gradients, convolution oracles, Adam, checkpoints."""

import numpy as np
import pytest

from bass2drums.autograd import (
    Adam,
    CheckpointError,
    Tensor,
    concat,
    conv2d,
    conv_transpose2d,
    gradcheck,
    instance_norm,
    read_checkpoint,
    write_checkpoint,
)
from bass2drums.autograd import tensor as T


# ---------------------------------------------------------------------------
# graph semantics


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        t.backward()


def test_leaf_grads_accumulate_across_backwards():
    a = Tensor(np.array(3.0), requires_grad=True)
    loss = T.mul(a, 2.0)
    loss.backward()
    assert a.grad.item() == 2.0
    loss2 = T.mul(a, 2.0)
    loss2.backward()
    assert a.grad.item() == 4.0  # accumulated, caller clears between steps


def test_interior_grads_reset_per_backward():
    a = Tensor(np.array(2.0), requires_grad=True)
    b = T.square(a)
    c = T.mul(b, 1.0)
    c.backward()
    first = b.grad.copy()
    c2 = T.mul(b, 1.0)
    c2.backward()
    # interior node grad is from this sweep only, not accumulated
    np.testing.assert_array_equal(b.grad, first)


def test_multi_consumer_sums_paths():
    a = Tensor(np.array(5.0), requires_grad=True)
    # loss = a*a + 3a: d/da = 2a + 3 = 13
    loss = T.add(T.square(a), T.mul(a, 3.0))
    loss.backward()
    assert a.grad.item() == 13.0


def test_requires_grad_captured_at_build_time():
    a = Tensor(np.array(2.0), requires_grad=True)
    b = Tensor(np.array(4.0), requires_grad=True)
    b.requires_grad = False
    frozen = T.mul(a, b)  # built while b is frozen
    b.requires_grad = True
    live = T.mul(a, b)    # built while b is live
    T.add(frozen, live).backward()
    assert b.grad is not None and b.grad.item() == 2.0  # only the live path
    assert a.grad.item() == 8.0


def test_no_broadcasting():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((2, 1)))
    with pytest.raises(ValueError):
        T.add(a, b)
    with pytest.raises(ValueError):
        T.mul(a, Tensor(np.ones(3)))


def test_detach_cuts_graph():
    a = Tensor(np.array(2.0), requires_grad=True)
    d = T.square(a).detach()
    assert not d.requires_grad
    loss = T.mul(Tensor(np.array(3.0), requires_grad=True), float(d.data))
    loss.backward()
    assert a.grad is None


def test_operator_sugar():
    a = Tensor(np.full((2, 2), 3.0), requires_grad=True)
    b = Tensor(np.full((2, 2), 2.0))
    out = (a * b + 1.0 - b) * 2.0
    np.testing.assert_array_equal(out.data, 10.0)
    T.sum_(out).backward()
    np.testing.assert_array_equal(a.grad, 4.0)


# ---------------------------------------------------------------------------
# finite-difference checks (ops exhaustively, models sampled)


def test_all_gradients_match_finite_differences():
    failures = [(name, err) for name, err in gradcheck.run_all(seed=0, include_models=False)
                if err >= 1e-4]
    assert not failures, failures


def test_model_gradients_match_finite_differences():
    results = dict(gradcheck.run_all(seed=0, include_models=True))
    for name in ("generator_desk", "discriminator_desk", "unet_generator_desk"):
        assert results[name] < 1e-4, (name, results[name])


# ---------------------------------------------------------------------------
# convolution oracles


def _conv_naive(x, w, b, stride, padding):
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for ni in range(n):
        for co in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c_in):
                        for a in range(k):
                            for bb in range(k):
                                acc += (xp[ni, ci, i * stride + a, j * stride + bb]
                                        * w[co, ci, a, bb])
                    out[ni, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


def test_conv2d_matches_naive_loops():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    for stride, padding in [(1, 0), (1, 1), (3, 0)]:
        ref = _conv_naive(x, w, b, stride, padding)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                     padding=padding).data
        np.testing.assert_allclose(got, ref, atol=1e-10)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 2, 6, 6)))
    w = Tensor(np.zeros((3, 2, 3, 3)))
    with pytest.raises(ValueError):
        conv2d(x, w, stride=2)  # (6-3) % 2 != 0
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.zeros((3, 4, 3, 3))))  # channel mismatch
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 2, 2, 2))), w)  # input smaller than kernel


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, convT(y)> for the same kernel/stride/padding
    rng = np.random.default_rng(1)
    for stride, padding, k in [(1, 0, 3), (2, 1, 4), (1, 1, 3)]:
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, k, k))
        fwd = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        y = rng.normal(size=fwd.shape)
        # the same (4,3,k,k) array works for both: conv reads it as (O,C,k,k),
        # the transpose as (C,O,k,k)
        back = conv_transpose2d(Tensor(y), Tensor(w),
                                stride=stride, padding=padding).data
        lhs = np.vdot(fwd, y)
        rhs = np.vdot(x, back)
        assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs)), (stride, padding, k)


def test_conv_transpose_output_shape():
    x = Tensor(np.zeros((1, 3, 5, 5)))
    w = Tensor(np.zeros((3, 4, 4, 4)))
    out = conv_transpose2d(x, w, stride=2, padding=1)
    assert out.data.shape == (1, 4, 10, 10)  # (5-1)*2 + 4 - 2*1


def test_reflect_padding_forward():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0  # identity kernel picks out the padded matrix
    out = conv2d(Tensor(x), Tensor(w), padding=1, pad_mode="reflect").data
    np.testing.assert_allclose(out, x)
    # corner check via an explicit numpy reference
    ref = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    shifted = conv2d(Tensor(x), Tensor(np.eye(3)[None, None] * 0
                                       + np.array([[1, 0, 0], [0, 0, 0], [0, 0, 0]])[None, None]),
                     padding=1, pad_mode="reflect").data
    np.testing.assert_allclose(shifted[0, 0], ref[0, 0, :-2, :-2])


def test_instance_norm_constant_channel():
    x = Tensor(np.full((1, 2, 4, 4), 7.0))
    gamma = Tensor(np.array([2.0, 3.0]))
    beta = Tensor(np.array([0.5, -0.5]))
    out = instance_norm(x, gamma, beta).data
    # zero variance: normalized values are 0, so the affine shift is all that remains
    np.testing.assert_allclose(out[0, 0], 0.5, atol=1e-6)
    np.testing.assert_allclose(out[0, 1], -0.5, atol=1e-6)


def test_instance_norm_statistics():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(3.0, 2.0, size=(2, 3, 8, 8)))
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.zeros(3))
    out = instance_norm(x, gamma, beta).data
    means = out.mean(axis=(2, 3))
    stds = out.std(axis=(2, 3))
    np.testing.assert_allclose(means, 0.0, atol=1e-7)
    np.testing.assert_allclose(stds, 1.0, atol=1e-3)


def test_concat_axis1():
    a = Tensor(np.ones((1, 2, 3, 3)))
    b = Tensor(np.zeros((1, 1, 3, 3)))
    out = concat([a, b], axis=1)
    assert out.data.shape == (1, 3, 3, 3)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_closed_form():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    # bias correction makes the first update lr * g/(|g| + eps) ~= lr * sign(g)
    np.testing.assert_allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adam_descends_quadratic():
    rng = np.random.default_rng(3)
    target = rng.normal(size=8)
    p = Tensor(rng.normal(size=8), requires_grad=True)
    opt = Adam({"p": p}, lr=0.05)
    start = float(np.sum((p.data - target) ** 2))
    for _ in range(200):
        opt.zero_grad()
        loss = T.sum_(T.square(T.sub(p, Tensor(target))))
        loss.backward()
        opt.step()
    assert float(np.sum((p.data - target) ** 2)) < 0.01 * start


def test_adam_skips_gradless_params():
    p = Tensor(np.array([1.0]), requires_grad=True)
    q = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"p": p, "q": q})
    p.grad = np.array([1.0])
    opt.step()
    assert q.data[0] == 2.0 and p.data[0] != 1.0


def test_adam_state_round_trip():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    for _ in range(3):
        p.grad = np.array([0.3, -0.2])
        opt.step()
    arrays = opt.state_arrays("opt.")
    p2 = Tensor(p.data.copy(), requires_grad=True)
    opt2 = Adam({"p": p2}, lr=0.01)
    opt2.load_state_arrays(arrays, "opt.")
    p.grad = np.array([0.1, 0.1])
    p2.grad = np.array([0.1, 0.1])
    opt.step()
    opt2.step()
    np.testing.assert_array_equal(p.data, p2.data)


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    arrays = {
        "w1": rng.normal(size=(3, 4)).astype(np.float32),
        "w2": rng.normal(size=(2, 2, 2)).astype(np.float64),
        "img": rng.integers(0, 255, size=(8, 8)).astype(np.uint8),
        "t": np.array([7], dtype=np.int64),
    }
    meta = {"kind": "test", "step": 7}
    p = tmp_path / "state.ckpt"
    write_checkpoint(p, meta, arrays)
    meta2, arrays2 = read_checkpoint(p)
    assert meta2 == meta
    assert list(arrays2) == list(arrays)  # order preserved
    for k in arrays:
        np.testing.assert_array_equal(arrays2[k], arrays[k])
        assert arrays2[k].dtype == arrays[k].dtype


def test_checkpoint_bytes_stable(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    write_checkpoint(p1, {"x": 1}, arrays)
    write_checkpoint(p2, {"x": 1}, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_error_taxonomy(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        read_checkpoint(p)
    good = tmp_path / "good.ckpt"
    write_checkpoint(good, {}, {"a": np.zeros(4, dtype=np.float32)})
    blob = good.read_bytes()
    p.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        read_checkpoint(p)
    with pytest.raises(ValueError):
        write_checkpoint(tmp_path / "x.ckpt", {}, {"a": np.zeros(2, dtype=np.int16)})
