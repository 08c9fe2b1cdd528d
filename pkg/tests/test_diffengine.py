import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinflow import diffengine as ad


def central_grad(f, x, h=1e-5):
    """Finite-difference gradient of scalar f at array x (the oracle)."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def tape_grad(build, x):
    t = ad.tensor(x, requires_grad=True)
    ad.backward(build(t))
    return t.grad


def test_sin_half_pi():
    assert ad.evaluate(ad.sin(ad.tensor(np.pi / 2))) == 1.0


def test_tanh_zero_identity():
    x = ad.tensor(1.0)
    assert ad.evaluate(x + ad.tanh(ad.tensor(0.0)) * ad.sin(x)) == 1.0


def test_matmul_hand_values():
    out = ad.matmul(ad.tensor([[1, 2], [3, 4]]), ad.tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_backward_sin_at_zero():
    z = ad.tensor(0.0, requires_grad=True)
    ad.backward(ad.sin(z))
    assert z.grad == 1.0


def test_backward_sum_of_squares():
    x = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.square(x))


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ad.add(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros(4)))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((2, 3))))


def test_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(ad.tensor([1.0, 0.0]))
    with pytest.raises(ad.DomainError):
        ad.log(np.array([-1.0]))


def test_softplus_stable_for_large_inputs():
    v = ad.softplus(ad.tensor([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(v.data, [0.0, np.log(2.0), 800.0])


def test_accumulation_until_zeroed():
    store = ad.ParamStore()
    w = store.add("w", [1.0, -2.0])
    for _ in range(2):
        ad.backward(ad.sum(ad.square(w)))
    np.testing.assert_array_equal(w.grad, [4.0, -8.0])
    before = w.data.copy()
    store.zero_grad()
    np.testing.assert_array_equal(w.grad, [0.0, 0.0])
    np.testing.assert_array_equal(w.data, before)


def test_backward_linearity():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(3, 4))
    f1 = lambda t: ad.sum(ad.sin(t) * t)
    f2 = lambda t: ad.mean(ad.exp(ad.tanh(t)))
    g_sum = tape_grad(lambda t: f1(t) + f2(t), x0)
    np.testing.assert_allclose(g_sum, tape_grad(f1, x0) + tape_grad(f2, x0), rtol=1e-14, atol=1e-15)


def test_determinism_bit_identical():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(5, 3))
    build = lambda: ad.sum(ad.softmax(ad.tensor(x0)) * ad.cos(ad.tensor(x0)))
    assert ad.evaluate(build()).tobytes() == ad.evaluate(build()).tobytes()


# Each case: (name, tape builder, numpy oracle of the same scalar)
rng = np.random.default_rng(42)
W = rng.normal(size=(4, 2))
M = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
B2 = rng.normal(size=(4,))

UNARY_CASES = [
    ("sin", lambda t: ad.sum(ad.sin(t)), lambda x: np.sin(x).sum()),
    ("cos", lambda t: ad.sum(ad.cos(t)), lambda x: np.cos(x).sum()),
    ("tanh", lambda t: ad.sum(ad.tanh(t) * t), lambda x: (np.tanh(x) * x).sum()),
    ("exp", lambda t: ad.mean(ad.exp(t)), lambda x: np.exp(x).mean()),
    ("log", lambda t: ad.sum(ad.log(ad.square(t) + 1.0)), lambda x: np.log(x ** 2 + 1).sum()),
    ("softplus", lambda t: ad.sum(ad.softplus(t) * t),
     lambda x: ((np.maximum(x, 0) + np.log1p(np.exp(-abs(x)))) * x).sum()),
    ("softmax", lambda t: ad.sum(ad.softmax(t) * ad.cos(t)),
     lambda x: (np.exp(x) / np.exp(x).sum(-1, keepdims=True) * np.cos(x)).sum()),
    ("square", lambda t: ad.sum(ad.square(t)), lambda x: (x ** 2).sum()),
    ("neg_sub_div", lambda t: ad.sum(ad.div(-t, ad.square(t) + 2.0) - t),
     lambda x: (-x / (x ** 2 + 2) - x).sum()),
    ("matmul", lambda t: ad.sum(ad.tanh(ad.matmul(t, ad.tensor(W)))), lambda x: np.tanh(x @ W).sum()),
    ("mask_mul", lambda t: ad.sum(ad.sin(ad.mask_mul(t, M))), lambda x: np.sin(x * M).sum()),
    ("broadcast_add", lambda t: ad.sum(ad.sin(ad.add(t, ad.tensor(B2)))),
     lambda x: np.sin(x + B2).sum()),
    ("sum_axis", lambda t: ad.sum(ad.square(ad.sum(t, axis=-1))), lambda x: (x.sum(-1) ** 2).sum()),
    ("mean_axis", lambda t: ad.sum(ad.exp(ad.mean(t, axis=0))), lambda x: np.exp(x.mean(0)).sum()),
    ("concat", lambda t: ad.sum(ad.sin(ad.concat([t, ad.square(t)], axis=-1)) * 1.5),
     lambda x: 1.5 * np.sin(np.concatenate([x, x ** 2], -1)).sum()),
    ("reshape", lambda t: ad.sum(ad.cos(ad.reshape(t, (4, 3))) * ad.tensor(np.arange(12.0).reshape(4, 3))),
     lambda x: (np.cos(x.reshape(4, 3)) * np.arange(12.0).reshape(4, 3)).sum()),
]


@pytest.mark.parametrize("name,build,oracle", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_op_gradient_matches_finite_differences(name, build, oracle):
    x0 = np.random.default_rng(7).normal(size=(3, 4))
    assert ad.evaluate(build(ad.tensor(x0))) == pytest.approx(oracle(x0), rel=1e-13)
    g = tape_grad(build, x0)
    num = central_grad(oracle, x0)
    assert np.max(np.abs(g - num) / np.maximum(1.0, np.abs(g))) < 1e-6


def test_broadcast_gradient_reduces_to_operand_shape():
    a = ad.tensor(np.ones((3, 2, 1)), requires_grad=True)
    b = ad.tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.sum(ad.mul(a, b)))
    np.testing.assert_array_equal(a.grad, np.full((3, 2, 1), 6.0))
    np.testing.assert_array_equal(b.grad, np.full(4, 6.0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_plain_arrays_match_tape_values(values):
    x = np.array(values)
    on_tape = ad.evaluate(ad.tanh(ad.sin(ad.tensor(x)) * 2.0))
    assert np.array_equal(on_tape, ad.tanh(ad.sin(x) * 2.0))


def test_grad_check_polynomial():
    store = ad.ParamStore()
    w = store.add("w", 3.0)
    assert ad.grad_check(lambda: ad.square(w), store, 1e-5) < 1e-8


def test_grad_check_flags_doubled_gradient():
    store = ad.ParamStore()
    w = store.add("w", 3.0)
    err = ad.grad_check(lambda: ad.square(w), store, 1e-5, analytic={"w": np.array(12.0)})
    assert err == pytest.approx(0.5, abs=1e-8)


def test_grad_check_rejects_non_finite():
    store = ad.ParamStore()
    w = store.add("w", 0.0)
    with pytest.raises(FloatingPointError):
        ad.grad_check(lambda: ad.div(1.0, w), store, 1e-5)
