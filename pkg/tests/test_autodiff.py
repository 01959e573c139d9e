import numpy as np
import pytest

from segfuse import autodiff as ad
from segfuse.autodiff import Tape, Tensor


def grad_of(f, x):
    t = Tensor(np.array(x, dtype=float), requires_grad=True)
    with Tape() as tape:
        out = f(t)
    tape.backward(out)
    return out, t.grad


def fd_grad(f, x, eps=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        p, m = x.copy(), x.copy()
        p[i] += eps
        m[i] -= eps
        g[i] = (f(Tensor(p)).item() - f(Tensor(m)).item()) / (2 * eps)
    return g


def test_hinge_values():
    assert ad.hinge(Tensor(-1.0)).item() == 0.0
    assert ad.hinge(Tensor(0.7)).item() == 0.7


def test_softmax_of_zero_row_is_uniform():
    np.testing.assert_array_equal(ad.row_softmax(Tensor(np.zeros((1, 4)))).data, [[0.25] * 4])


def test_mean_square_gradient_matches_finite_differences():
    f = lambda x: ad.mean(ad.square(x))
    expected = fd_grad(f, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(expected, [2 / 3, 4 / 3, 2], atol=1e-8)
    _, g = grad_of(f, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(g, expected, atol=1e-8)


def test_grad_check_sum_is_exact():
    assert ad.grad_check(lambda x: ad.sum(x), np.array([0.3, -1.0, 2.0])) < 1e-9


def test_grad_check_skips_hinge_kink():
    # coordinate 0 sits exactly on the kink; the others are smooth
    x = np.array([0.0, 0.5, -0.5])
    assert ad.grad_check(lambda t: ad.sum(ad.hinge(t)), x) < 1e-8


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ad.ShapeError):
        ad.grad_check(lambda t: t, np.ones(3))


def test_kink_gradient_is_zero():
    _, g = grad_of(lambda t: ad.sum(ad.hinge(t)), [0.0, 1.0])
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ad.ShapeError, match=r"\(2,\).*\(3,\)"):
        ad.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_non_finite_output_trips_debug_check():
    with np.errstate(divide="ignore"), pytest.raises(FloatingPointError):
        ad.div(Tensor(1.0), Tensor(0.0))


def test_mask_mul_routes_zero_gradient():
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, g = grad_of(lambda t: ad.sum(ad.square(ad.elementwise_mask_mul(t, mask))), np.ones((2, 2)) * 3)
    np.testing.assert_array_equal(g, [[6.0, 0.0], [0.0, 6.0]])


def test_masked_softmax_equals_softmax_times_mask_renormalised(rng):
    x = rng.normal(size=(5, 5))
    m = (rng.random((5, 5)) < 0.5).astype(float) + np.eye(5)
    m = np.minimum(m, 1)
    p = ad.row_softmax(Tensor(x)).data * m
    np.testing.assert_allclose(ad.masked_row_softmax(Tensor(x), m).data, p / p.sum(1, keepdims=True), atol=1e-15)
    np.testing.assert_array_equal(ad.masked_row_softmax(Tensor(x), np.ones((5, 5))).data,
                                  ad.row_softmax(Tensor(x)).data)


def test_softmax_rows_sum_to_one(rng):
    for _ in range(50):
        x = rng.normal(scale=10, size=(rng.integers(1, 6), rng.integers(1, 9)))
        np.testing.assert_allclose(ad.row_softmax(Tensor(x)).data.sum(axis=1), 1.0, atol=1e-12)


def _op_cases(rng):
    """(name, scalar function of one tensor, input) with random weights to avoid symmetric zeros."""
    r, c = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    x = rng.normal(size=(r, c))
    w = rng.normal(size=(r, c))
    other = rng.normal(size=(r, c))
    right = rng.normal(size=(c, 3))
    gamma, beta = rng.normal(size=c), rng.normal(size=c)
    mask = (rng.random((r, c)) < 0.6).astype(float)
    idx = rng.integers(0, r, size=r + 2)
    wsum = lambda y: ad.sum(ad.mul(y, rng_w(y.shape)))
    cache = {}

    def rng_w(shape):
        if shape not in cache:
            cache[shape] = np.random.default_rng(hash(shape) % 2**32).normal(size=shape)
        return cache[shape]

    return [
        ("add", lambda t: wsum(ad.add(t, other)), x),
        ("add_bias", lambda t: wsum(ad.add(Tensor(other), ad.sum(t, axis=0))), x),
        ("sub", lambda t: wsum(ad.sub(other, t)), x),
        ("mul", lambda t: wsum(ad.mul(t, t)), x),
        ("div", lambda t: wsum(ad.div(other, ad.add(ad.square(t), 1.0))), x),
        ("matmul", lambda t: wsum(ad.matmul(t, right)), x),
        ("transpose", lambda t: wsum(ad.transpose(t)), x),
        ("row_softmax", lambda t: wsum(ad.row_softmax(t)), x),
        ("masked_row_softmax", lambda t: wsum(ad.masked_row_softmax(t, np.maximum(mask, np.eye(r, c)[:, :] if r <= c else mask))), x),
        ("relu", lambda t: wsum(ad.relu(t)), x),
        ("layer_norm", lambda t: wsum(ad.layer_norm(t, gamma, beta)), x),
        ("hinge", lambda t: wsum(ad.hinge(t)), x),
        ("square", lambda t: wsum(ad.square(t)), x),
        ("abs_l1", lambda t: wsum(ad.abs_l1(t, axis=1)), x),
        ("row_l2", lambda t: wsum(ad.row_l2(t)), x),
        ("sum", lambda t: ad.sum(ad.mul(ad.sum(t, axis=1), rng_w((r,)))), x),
        ("mean", lambda t: ad.mean(ad.mul(t, w)), x),
        ("scalar_mul", lambda t: wsum(ad.scalar_mul(t, -2.5)), x),
        ("mask_mul", lambda t: wsum(ad.elementwise_mask_mul(t, mask)), x),
        ("gather_rows", lambda t: wsum(ad.gather_rows(t, idx)), x),
        ("concat_cols", lambda t: wsum(ad.concat_cols([t, ad.square(t)])), x),
        ("slice_cols", lambda t: wsum(ad.slice_cols(t, 1, c)), x),
    ]


def test_every_op_passes_grad_check_on_random_inputs():
    worst = {}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for name, f, x in _op_cases(rng):
            if name == "masked_row_softmax" and x.shape[0] > x.shape[1]:
                continue
            err = ad.grad_check(f, x, eps=1e-6, fd_dtype=np.longdouble)
            worst[name] = max(worst.get(name, 0.0), err)
    assert max(worst.values()) < 1e-4, worst


def test_backward_order_is_reverse_of_recording():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.square(x)
        z = ad.sum(ad.mul(y, x))
    nodes = [r.out.node for r in tape.records]
    assert nodes == sorted(nodes)
    for rec in tape.records:
        for p in rec.parents:
            assert p.node is None or p.node < rec.out.node
    tape.backward(z)
    np.testing.assert_allclose(x.grad, 3 * x.data ** 2)


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    ad.adam_step([p], [np.zeros(2)], lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array(0.0), requires_grad=True)
    ad.adam_step([p], [np.array(1.0)], lr=0.1)
    # bias-corrected m/sqrt(v) is exactly 1, so only eps separates the step from lr
    assert p.item() == pytest.approx(-0.1, abs=1e-8)


def test_adam_is_deterministic(rng):
    grads = [rng.normal(size=(3, 2)) for _ in range(10)]

    def run():
        p = Tensor(np.ones((3, 2)), requires_grad=True)
        st = None
        for g in grads:
            st = ad.adam_step([p], [g], st, lr=0.05)
        return p.data

    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"a.w": Tensor(rng.normal(size=(3, 4))), "bias": Tensor(rng.normal(size=5)), "s": Tensor(2.0)}
    path = tmp_path / "m.sfck"
    ad.save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw.startswith(b"SFCK\x01")
    back = ad.load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k].data)
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        ad.load_checkpoint(path)
