import numpy as np
import pytest

from graphcollide import autodiff as ad


def central_fd(f, x, h=1e-6):
    """Independent finite-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_square_gradient():
    tape = ad.Tape()
    x = tape.leaf(3.0)
    y = ad.square(x)
    tape.backward(y)
    assert float(y.data) == 9.0
    assert float(x.grad) == 6.0


def test_softmax_uniform_and_jacobian_rows():
    tape = ad.Tape()
    x = tape.leaf(np.full(4, 1.7))
    y = ad.softmax(x)
    np.testing.assert_allclose(y.data, 0.25)
    # Each Jacobian row sums to zero: a uniform perturbation leaves softmax unchanged.
    for i in range(4):
        t = ad.Tape()
        xi = t.leaf(np.full(4, 1.7))
        yi = ad.softmax(xi)
        t.backward(ad.slice_(yi, i))
        np.testing.assert_allclose(np.sum(xi.grad), 0.0, atol=1e-15)


def test_softmax_shift_invariance():
    v = np.array([0.3, -1.2, 2.2, 0.0])
    t1, t2 = ad.Tape(), ad.Tape()
    y1 = ad.softmax(t1.leaf(v))
    y2 = ad.softmax(t2.leaf(v + 17.5))
    np.testing.assert_allclose(y1.data, y2.data, atol=1e-12)


def _five_layer_composite(tape, x_vec):
    """A mix of ops exercising most of the set; returns a scalar Value."""
    W1 = tape.constant(np.linspace(-0.4, 0.6, 15).reshape(3, 5))
    h1 = ad.matvec(W1, x_vec)
    h2 = ad.leaky_relu(h1, 0.2)
    h3 = ad.add(ad.sin(h2), ad.mul(h2, tape.constant(0.5)))
    h4 = ad.softmax(h3)
    s = ad.dot(h4, ad.cos(h2))
    return ad.add(ad.square(s), ad.reciprocal(ad.add(s, tape.constant(3.0))))


def test_composite_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        x0 = rng.normal(size=5)

        def f(x):
            t = ad.Tape()
            return float(_five_layer_composite(t, t.leaf(x)).data)

        tape = ad.Tape()
        xv = tape.leaf(x0)
        out = _five_layer_composite(tape, xv)
        tape.backward(out)
        g_fd = central_fd(f, x0)
        rel = np.linalg.norm(xv.grad - g_fd) / max(np.linalg.norm(g_fd), 1e-12)
        assert rel < 1e-7


def test_matrix_ops_match_finite_differences():
    rng = np.random.default_rng(3)
    A0 = rng.normal(size=(4, 3))
    B0 = rng.normal(size=(3, 2))

    def f(flat):
        A = flat[:12].reshape(4, 3)
        t = ad.Tape()
        out = ad.matmul(t.leaf(A), t.constant(B0))
        cat = ad.concat([out, ad.square(out)], axis=1)
        return float(ad.sum_reduce(ad.leaky_relu(cat, 0.2)).data)

    tape = ad.Tape()
    Av = tape.leaf(A0)
    out = ad.matmul(Av, tape.constant(B0))
    cat = ad.concat([out, ad.square(out)], axis=1)
    tape.backward(ad.sum_reduce(ad.leaky_relu(cat, 0.2)))
    g_fd = central_fd(f, A0.reshape(-1)).reshape(4, 3)
    np.testing.assert_allclose(Av.grad, g_fd, rtol=1e-6, atol=1e-9)


def test_gather_and_segment_ops_match_finite_differences():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(6, 3))
    idx = np.array([0, 2, 2, 5, 1, 4, 0])
    seg = ad.SegmentPlan([3, 2, 2])

    def f(flat):
        t = ad.Tape()
        x = t.leaf(flat.reshape(6, 3))
        g = ad.gather_rows(x, ad.GatherPlan(idx, 6))
        s = ad.segment_sum(ad.square(g), seg)
        return float(ad.sum_reduce(ad.mul(s, t.constant(np.arange(1.0, 10.0).reshape(3, 3)))).data)

    tape = ad.Tape()
    xv = tape.leaf(x0)
    g = ad.gather_rows(xv, ad.GatherPlan(idx, 6))
    s = ad.segment_sum(ad.square(g), seg)
    root = ad.sum_reduce(ad.mul(s, tape.constant(np.arange(1.0, 10.0).reshape(3, 3))))
    tape.backward(root)
    g_fd = central_fd(f, x0.reshape(-1)).reshape(6, 3)
    np.testing.assert_allclose(xv.grad, g_fd, rtol=1e-6, atol=1e-9)


def test_root_constant_leaves_zero_gradients():
    tape = ad.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    _ = ad.square(x)
    root = ad.mul(tape.constant(4.0), tape.constant(2.0))
    # Root does not depend on x, so x receives no gradient.
    tape.backward(ad.sum_reduce(root))
    assert x.grad is None


def test_root_sum_gives_unit_gradients():
    tape = ad.Tape()
    x = tape.leaf(np.array([1.0, -2.0, 3.5]))
    tape.backward(ad.sum_reduce(x))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_linearity_of_backward():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=4)
    a, b = 2.5, -1.25

    def grads(coef_f, coef_g):
        tape = ad.Tape()
        x = tape.leaf(x0)
        f = ad.sum_reduce(ad.square(x))
        g = ad.dot(x, tape.constant(np.array([1.0, 2.0, 3.0, 4.0])))
        root = ad.add(
            ad.mul(tape.constant(coef_f), f), ad.mul(tape.constant(coef_g), g)
        )
        tape.backward(root)
        return x.grad

    combined = grads(a, b)
    gf = grads(1.0, 0.0)
    gg = grads(0.0, 1.0)
    np.testing.assert_allclose(combined, a * gf + b * gg, atol=1e-12)


def test_leaky_relu_slope_at_kink():
    tape = ad.Tape()
    x = tape.leaf(np.array([-1.0, 0.0, 2.0]))
    y = ad.leaky_relu(x, 0.2)
    tape.backward(ad.sum_reduce(y))
    np.testing.assert_array_equal(x.grad, np.array([0.2, 0.2, 1.0]))


def test_max_reduce_routes_to_first_argmax():
    tape = ad.Tape()
    a = tape.leaf(np.array([1.0, 5.0]))
    b = tape.leaf(np.array([1.0, 3.0]))
    y = ad.elementwise_max_reduce([a, b])
    tape.backward(ad.sum_reduce(y))
    np.testing.assert_array_equal(a.grad, np.array([1.0, 1.0]))  # tie at index 0 goes to a
    assert b.grad is None or not np.any(b.grad)


def test_determinism_bit_identical():
    def run():
        tape = ad.Tape()
        x = tape.leaf(np.linspace(-1, 1, 6))
        y = ad.sum_reduce(ad.softmax(ad.mul(x, x)))
        tape.backward(y)
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_double_backward_raises():
    tape = ad.Tape()
    x = tape.leaf(2.0)
    y = ad.square(x)
    tape.backward(y)
    with pytest.raises(ad.TapeError):
        tape.backward(y)


def test_non_scalar_root_raises():
    tape = ad.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(ad.TapeError):
        tape.backward(ad.square(x))


def test_cross_tape_mixing_raises():
    t1, t2 = ad.Tape(), ad.Tape()
    with pytest.raises(ad.TapeError):
        ad.add(t1.leaf(1.0), t2.leaf(2.0))


def test_shape_mismatch_raises():
    tape = ad.Tape()
    with pytest.raises(ad.DimensionError):
        ad.add(tape.leaf(np.zeros(3)), tape.leaf(np.zeros(4)))
    with pytest.raises(ad.DimensionError):
        ad.matmul(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros((2, 3))))


def test_non_finite_is_reported():
    tape = ad.Tape()
    x = tape.leaf(0.0)
    with pytest.raises(ad.NonFiniteError):
        ad.reciprocal(x)
