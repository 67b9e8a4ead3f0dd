import numpy as np
import pytest

from batlab.errors import DimensionError, NumericsError, ParameterError
from batlab.numerics import AdamW, Tape, grad_check, lr_schedule, ops, using_dtype
from batlab.numerics.tensor import constant


def tensors_equal(t, arr, tol=0.0):
    return np.allclose(t.data, arr, rtol=0, atol=tol)


class TestMatmul:
    def test_identity(self):
        b = np.arange(6.0).reshape(2, 3)
        out = ops.matmul(constant(np.eye(2)), constant(b))
        assert np.array_equal(out.data, b.astype(out.data.dtype))

    def test_annihilator(self):
        a = np.random.default_rng(0).normal(size=(3, 4))
        out = ops.matmul(constant(a), constant(np.zeros((4, 2))))
        assert np.array_equal(out.data, np.zeros((3, 2), dtype=out.data.dtype))

    def test_hand_product(self):
        out = ops.matmul(constant([[1.0, 2.0], [3.0, 4.0]]), constant([[5.0, 6.0], [7.0, 8.0]]))
        assert np.array_equal(out.data, np.array([[19.0, 22.0], [43.0, 50.0]], dtype=out.data.dtype))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_batched_and_vector_forms(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 2, 3))
        b = rng.normal(size=(3, 4))
        out = ops.matmul(constant(a), constant(b))
        assert out.shape == (5, 2, 4)
        assert np.allclose(out.data, a.astype(out.data.dtype) @ b.astype(out.data.dtype), atol=1e-5)
        v = rng.normal(size=3)
        assert ops.matmul(constant(v), constant(b)).shape == (4,)
        assert ops.matmul(constant(a[0]), constant(v)).shape == (2,)


class TestLayerNorm:
    def test_constant_rows_zero(self):
        x = np.full((4, 8), 3.25)
        out = ops.layer_norm(constant(x), constant(np.ones(8)), constant(np.zeros(8)), eps=1e-6)
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_two_point(self):
        out = ops.layer_norm(constant([1.0, 3.0]), constant(np.ones(2)), constant(np.zeros(2)), eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-5)

    def test_output_statistics(self):
        with using_dtype("float64"):
            rng = np.random.default_rng(7)
            x = rng.normal(size=(16, 32)) * 3.0 + 1.0
            out = ops.layer_norm(constant(x), constant(np.ones(32)), constant(np.zeros(32)), eps=1e-6)
            assert np.all(np.abs(out.data.mean(axis=-1)) < 1e-6)
            assert np.all(np.abs(out.data.var(axis=-1) - 1.0) < 1e-4)

    def test_bad_eps(self):
        with pytest.raises(ParameterError):
            ops.layer_norm(constant([1.0, 2.0]), constant(np.ones(2)), constant(np.zeros(2)), eps=0.0)


class TestSoftmax:
    def test_uniform(self):
        out = ops.softmax(constant(np.zeros(5)))
        assert np.allclose(out.data, 0.2, atol=1e-12)

    def test_closed_form(self):
        out = ops.softmax(constant([0.0, np.log(3.0)]))
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-6)

    def test_shift_invariance_and_sum(self):
        with using_dtype("float64"):
            rng = np.random.default_rng(3)
            for _ in range(20):
                x = rng.normal(size=(4, 9)) * 5
                a = ops.softmax(constant(x), axis=-1).data
                b = ops.softmax(constant(x + 100.0), axis=-1).data
                assert np.all(np.abs(a - b) < 1e-12)
                assert np.all(np.abs(a.sum(axis=-1) - 1.0) < 1e-10)
                assert np.all(a > 0)


class TestSigmoid:
    def test_zero(self):
        assert ops.sigmoid(constant(0.0)).item() == 0.5

    def test_saturation_no_overflow(self):
        out = ops.sigmoid(constant([800.0, -800.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0)

    def test_symmetry(self):
        with using_dtype("float64"):
            s = ops.sigmoid(constant([2.0, -2.0])).data
            assert abs(s[0] + s[1] - 1.0) < 1e-12


class TestKernels:
    def test_mse_self_zero(self):
        z = constant(np.random.default_rng(0).normal(size=(3, 4)))
        assert ops.mse(z, z).item() == 0.0

    def test_l2_normalize(self):
        out = ops.l2_normalize(constant([3.0, 4.0]))
        assert np.allclose(out.data, [0.6, 0.8], atol=1e-6)

    def test_l2_normalize_zero_vector_warns(self):
        with pytest.warns(Warning):
            out = ops.l2_normalize(constant(np.zeros(4)))
        assert np.array_equal(out.data, np.zeros(4, dtype=out.data.dtype))

    def test_l2_idempotent(self):
        with using_dtype("float64"):
            rng = np.random.default_rng(5)
            x = rng.normal(size=(6, 8))
            once = ops.l2_normalize(constant(x)).data
            twice = ops.l2_normalize(constant(once)).data
            assert np.all(np.abs(once - twice) < 1e-12)

    def test_max_routes_to_single_argmax(self):
        with using_dtype("float64"):
            tape = Tape()
            x = tape.param("x", np.array([[1.0], [5.0], [2.0]]))
            out = ops.max_along(x, axis=0)
            assert out.data[0] == 5.0
            tape.backward(ops.sum_along(out))
            assert np.array_equal(x.grad, np.array([[0.0], [1.0], [0.0]]))

    def test_var_along(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        out = ops.var_along(constant(x), axis=-1)
        assert out.data[0] == pytest.approx(np.var(x), abs=1e-6)

    def test_gather_scatter_roundtrip(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 6, 3))
        idx = np.array([[0, 2, 5], [1, 3, 4]])
        g = ops.gather_tokens(constant(x), idx)
        base = constant(np.zeros((2, 6, 3)))
        s = ops.scatter_tokens(g, idx, base)
        for b in range(2):
            assert np.allclose(s.data[b, idx[b]], x[b, idx[b]].astype(s.data.dtype), atol=1e-6)

    def test_concat_and_slicing_grads(self):
        with using_dtype("float64"):
            tape = Tape()
            a = tape.param("a", np.ones(2))
            b = tape.param("b", np.ones(3) * 2)
            out = ops.concat([a, b], axis=0)
            tape.backward(ops.sum_along(ops.mul(out, constant(np.arange(5.0)))))
            assert np.array_equal(a.grad, [0.0, 1.0])
            assert np.array_equal(b.grad, [2.0, 3.0, 4.0])


class TestTapeInvariants:
    def test_reverse_order_replay(self):
        with using_dtype("float64"):
            tape = Tape()
            x = tape.param("x", np.array([2.0]))
            y = ops.mul(x, x)
            z = ops.add(y, x)
            loss = ops.sum_along(z)
            names = tape.op_sequence()
            assert names == ["mul", "add", "sum"]
            tape.backward(loss)
            assert x.grad[0] == pytest.approx(5.0)

    def test_constants_never_in_registry(self):
        tape = Tape()
        x = tape.param("x", np.ones(3))
        c = constant(np.ones(3))
        out = ops.sum_along(ops.mul(x, c))
        tape.backward(out)
        assert set(tape.params) == {"x"}
        assert c.grad is None

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericsError):
            constant(np.array([1.0, np.nan]))

    def test_ops_deterministic(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(5, 7))
        a = ops.softmax(ops.gelu(constant(x)), axis=-1).data
        b = ops.softmax(ops.gelu(constant(x)), axis=-1).data
        assert np.array_equal(a, b)


def _proj_loss(op_fn):
    """Wrap an op into a scalar via a fixed random projection."""

    def f(tape, h):
        out = op_fn(tape, h)
        rng = np.random.default_rng(99)
        proj = rng.normal(size=out.shape)
        return ops.sum_along(ops.mul(out, constant(proj)))

    return f


def _spread(rng, shape, gap=0.05):
    """Values with pairwise gaps along the last axis, for min/max checks."""
    n = int(np.prod(shape))
    vals = (np.arange(n) + rng.uniform(0.1, 0.4, size=n)) * gap
    rng.shuffle(vals)
    return vals.reshape(shape)


CASES = {
    "add": lambda t, h: ops.add(h["x"], h["y"]),
    "sub": lambda t, h: ops.sub(h["x"], h["y"]),
    "mul": lambda t, h: ops.mul(h["x"], h["y"]),
    "neg": lambda t, h: ops.neg(h["x"]),
    "scale": lambda t, h: ops.scale(h["x"], -1.7),
    "matmul": lambda t, h: ops.matmul(h["x"], h["y"]),
    "reshape": lambda t, h: ops.reshape(h["x"], (h["x"].size,)),
    "transpose": lambda t, h: ops.transpose(h["x"]),
    "layer_norm": lambda t, h: ops.layer_norm(h["x"], h["g"], h["b"], eps=1e-6),
    "softmax": lambda t, h: ops.softmax(h["x"], axis=-1),
    "log_softmax": lambda t, h: ops.log_softmax(h["x"], axis=-1),
    "sigmoid": lambda t, h: ops.sigmoid(h["x"]),
    "gelu": lambda t, h: ops.gelu(h["x"]),
    "sum": lambda t, h: ops.sum_along(h["x"], axis=0),
    "mean": lambda t, h: ops.mean_along(h["x"], axis=-1, keepdims=True),
    "var": lambda t, h: ops.var_along(h["x"], axis=-1),
    "l2_normalize": lambda t, h: ops.l2_normalize(h["x"], axis=-1),
    "max": lambda t, h: ops.max_along(h["x"], axis=-1),
    "min": lambda t, h: ops.min_along(h["x"], axis=-1),
    "mse": lambda t, h: ops.mse(h["x"], h["y"]),
    "sq_norm": lambda t, h: ops.sq_norm(h["x"]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    """Every differentiable op passes grad_check at <= 1e-4 over 20 seeds."""
    op_fn = CASES[name]
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        if name == "matmul":
            params = {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(4, 2))}
        elif name in ("max", "min"):
            params = {"x": _spread(rng, (3, 5))}
        elif name == "layer_norm":
            params = {"x": rng.normal(size=(3, 6)), "g": rng.normal(size=6), "b": rng.normal(size=6)}
        elif name in ("add", "sub", "mul", "mse"):
            params = {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(3, 4))}
        else:
            params = {"x": rng.normal(size=(3, 5))}
        report = grad_check(_proj_loss(op_fn), params, eps=1e-6)
        assert report.max_rel_err < 1e-4, f"{name} seed {seed}: {report}"


def test_gradcheck_quadratic_exact():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=7)
        report = grad_check(lambda t, h: ops.sq_norm(h["theta"]), {"theta": theta}, eps=1e-5)
        assert report.max_rel_err < 1e-9


def test_gradcheck_rejects_nondeterministic():
    from batlab.errors import NonDeterministicError

    state = {"calls": 0}

    def f(tape, h):
        state["calls"] += 1
        return ops.sum_along(ops.scale(h["x"], float(state["calls"])))

    with pytest.raises(NonDeterministicError):
        grad_check(f, {"x": np.ones(2)}, eps=1e-5)


def test_gather_scatter_gradients():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        idx = np.stack([rng.permutation(6)[:3] for _ in range(2)])

        def f(tape, h):
            picked = ops.gather_tokens(h["x"], idx)
            placed = ops.scatter_tokens(picked, idx, h["base"])
            return ops.sum_along(ops.mul(placed, constant(np.arange(placed.size).reshape(placed.shape))))

        params = {"x": rng.normal(size=(2, 6, 3)), "base": rng.normal(size=(2, 6, 3))}
        report = grad_check(f, params, eps=1e-6)
        assert report.max_rel_err < 1e-4


def test_bce_and_cross_entropy_gradients():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        targets = rng.integers(0, 2, size=(4, 3)).astype(float)
        report = grad_check(
            lambda t, h: ops.bce_with_logits(h["x"], targets), {"x": rng.normal(size=(4, 3))}, eps=1e-6
        )
        assert report.max_rel_err < 1e-4
        labels = rng.integers(0, 3, size=4)
        report = grad_check(
            lambda t, h: ops.cross_entropy(h["x"], labels), {"x": rng.normal(size=(4, 3))}, eps=1e-6
        )
        assert report.max_rel_err < 1e-4


class TestAdamW:
    def test_zero_grad_zero_decay_identity(self):
        p = {"w": np.ones(3)}
        opt = AdamW(p, lr=0.1)
        opt.step({"w": np.zeros(3)})
        assert np.array_equal(p["w"], np.ones(3))

    def test_degenerate_moments_step(self):
        p = {"w": np.array([1.0])}
        opt = AdamW(p, lr=0.01, beta1=0.0, beta2=0.0, eps=1e-8)
        opt.step({"w": np.array([1.0])})
        assert p["w"][0] == pytest.approx(1.0 - 0.01 / (1.0 + 1e-8), abs=1e-12)

    def test_pure_decay(self):
        p = {"w": np.array([2.0])}
        opt = AdamW(p, lr=1e-3, weight_decay=0.5)
        opt.step({"w": np.array([0.0])})
        assert p["w"][0] == pytest.approx(2.0 * (1.0 - 1e-3 * 0.5), abs=1e-12)

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=4)}
        before = p["w"].copy()
        opt = AdamW(p, lr=0.1, weight_decay=0.3)
        opt.step({"w": rng.normal(size=4)}, lr=0.0)
        assert np.array_equal(p["w"], before)

    def test_nan_grad_names_parameter(self):
        opt = AdamW({"oops": np.ones(2)}, lr=0.1)
        with pytest.raises(NumericsError, match="oops"):
            opt.step({"oops": np.array([np.nan, 0.0])})

    def test_step_counter_increments(self):
        opt = AdamW({"w": np.ones(1)}, lr=0.1)
        for i in range(3):
            opt.step({"w": np.zeros(1)})
            assert opt.state.step == i + 1


def test_lr_schedule_shape():
    assert lr_schedule(0, 1e-3, 10, 100, start_lr=1e-6) == pytest.approx(1e-6)
    assert lr_schedule(10, 1e-3, 10, 100) == pytest.approx(1e-3)
    assert lr_schedule(100, 1e-3, 10, 100, min_lr=1e-6) == pytest.approx(1e-6)
    mid = lr_schedule(55, 1e-3, 10, 100, min_lr=1e-6)
    assert 1e-6 < mid < 1e-3
