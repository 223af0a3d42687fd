import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuselab import autodiff as ad
from fuselab.params import ParamSet, max_rel_err


def ps(**arrays):
    return ParamSet({k: np.asarray(v, dtype=float) for k, v in arrays.items()},
                    {k: "other" for k in arrays})


def test_square_value_and_grad():
    params = ps(w=[3.0])
    val, grads = ad.eval_with_grad(lambda p: ad.reduce_sum(p["w"] * p["w"]), params)
    assert val == pytest.approx(9.0)
    assert grads["w"] == pytest.approx([6.0])


def test_logsumexp_symmetric():
    params = ps(w=[0.0, 0.0])
    val, grads = ad.eval_with_grad(lambda p: ad.logsumexp(p["w"]), params)
    assert val == pytest.approx(np.log(2.0))
    assert grads["w"] == pytest.approx([0.5, 0.5])


def test_finite_diff_square():
    params = ps(w=[2.0])
    g = ad.finite_diff_grad(lambda p: ad.reduce_sum(p["w"] * p["w"]), params,
                            eps=1e-6)
    assert g["w"][0] == pytest.approx(4.0, abs=1e-8)


def test_finite_diff_constant_function():
    params = ps(w=[[1.0, 2.0], [3.0, 4.0]])
    g = ad.finite_diff_grad(lambda p: ad.reduce_sum(p["w"] * 0.0), params)
    assert np.all(g["w"] == 0.0)


def test_finite_diff_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.finite_diff_grad(lambda p: ad.reduce_sum(p["w"]), ps(w=[1.0]), eps=0)


def _three_layer_net(p):
    h = ad.tanh(p["x"] @ p["w1"] + p["b1"])
    h = ad.tanh(h @ p["w2"] + p["b2"])
    return ad.reduce_sum(ad.tanh(h @ p["w3"]))


def test_random_network_matches_finite_diff():
    rng = np.random.default_rng(7)
    params = ps(
        x=rng.uniform(-2, 2, size=(2, 4)),
        w1=rng.uniform(-2, 2, size=(4, 5)), b1=rng.uniform(-1, 1, size=5),
        w2=rng.uniform(-2, 2, size=(5, 4)), b2=rng.uniform(-1, 1, size=4),
        w3=rng.uniform(-2, 2, size=(4, 2)),
    )
    _, grads = ad.eval_with_grad(_three_layer_net, params)
    fd = ad.finite_diff_grad(_three_layer_net, params, eps=1e-5)
    assert max_rel_err(grads, fd) < 1e-6


PRIMITIVES = [
    ("tanh", lambda p: ad.reduce_sum(ad.tanh(p["x"]))),
    ("sigmoid", lambda p: ad.reduce_sum(ad.sigmoid(p["x"]))),
    ("exp", lambda p: ad.reduce_sum(ad.exp(p["x"]) * p["y"])),
    ("log", lambda p: ad.reduce_sum(ad.log(ad.exp(p["x"]) + 3.0))),
    ("logsumexp", lambda p: ad.logsumexp(p["x"])),
    ("logsumexp_axis", lambda p: ad.reduce_sum(ad.logsumexp(p["x"], axis=1) * p["y"][:, 0])),
    ("log_softmax", lambda p: ad.reduce_sum(ad.log_softmax(p["x"], axis=-1) * p["y"])),
    ("softmax", lambda p: ad.reduce_sum(ad.softmax(p["x"], axis=-1) * p["y"])),
    ("matmul", lambda p: ad.reduce_sum(p["x"] @ p["w"])),
    ("logaddexp", lambda p: ad.reduce_sum(ad.logaddexp(p["x"], p["y"]))),
    ("index", lambda p: p["x"][1, 2] * p["x"][0, 0]),
    ("take_rows", lambda p: ad.reduce_sum(ad.take_rows(p["x"], [2, 0, 2]))),
    ("stack", lambda p: ad.reduce_sum(ad.stack([p["x"][0], p["x"][1]]) * p["y"][:2])),
    ("reshape", lambda p: ad.reduce_sum(ad.reshape(p["x"], (12,)) * ad.reshape(p["y"], (12,)))),
]


@pytest.mark.parametrize("name,f", PRIMITIVES, ids=[n for n, _ in PRIMITIVES])
def test_primitive_grad_vs_finite_diff(name, f):
    # 100 random trials spread over the primitives
    for trial in range(8):
        rng = np.random.default_rng(hash((name, trial)) % 2**32)
        params = ps(
            x=rng.uniform(-2, 2, size=(3, 4)),
            y=rng.uniform(-2, 2, size=(3, 4)),
            w=rng.uniform(-2, 2, size=(4, 2)),
        )
        _, grads = ad.eval_with_grad(f, params)
        fd = ad.finite_diff_grad(f, params)
        assert max_rel_err(grads, fd) < 1e-5, f"{name} trial {trial}"


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.floats(-100, 100))
@settings(max_examples=200, deadline=None)
def test_logsumexp_shift_invariance(xs, c):
    x = np.array(xs)
    assert ad.logsumexp(x + c) == pytest.approx(ad.logsumexp(x) + c, abs=1e-12)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=10))
@settings(max_examples=200, deadline=None)
def test_softmax_positive_and_normalized(xs):
    s = ad.softmax(np.array(xs))
    assert np.all(s > 0)
    assert abs(s.sum() - 1.0) <= 1e-12


def test_overflow_names_offending_primitive():
    with pytest.raises(ad.NumericError) as exc:
        ad.exp(ad.Tensor(np.array([1000.0])))
    assert "exp" in str(exc.value)


def test_gradient_accumulation_is_deterministic():
    def f(p):
        a = ad.tanh(p["x"] @ p["w"])
        return ad.reduce_sum(a * a) + ad.logsumexp(ad.reshape(a, (-1,)))

    rng = np.random.default_rng(3)
    params = ps(x=rng.normal(size=(3, 3)), w=rng.normal(size=(3, 3)))
    v1, g1 = ad.eval_with_grad(f, params)
    v2, g2 = ad.eval_with_grad(f, params)
    assert v1 == v2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)
