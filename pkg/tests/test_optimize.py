import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asinv.optimize import Armijo, ObjectiveHandle, bfgs_minimize, lbfgs_minimize


def quadratic(Q, b=None):
    b = np.zeros(len(Q)) if b is None else b
    return ObjectiveHandle(len(Q), lambda x: (0.5 * x @ Q @ x - b @ x, Q @ x - b))


def spd(n, seed=0, cond=10.0):
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return U @ np.diag(np.geomspace(1, cond, n)) @ U.T


def rosenbrock():
    def ev(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g

    return ObjectiveHandle(2, ev)


def test_bfgs_quadratic():
    Q = spd(5)
    res = bfgs_minimize(quadratic(Q), np.ones(5), grad_tol=1e-12, max_iter=30)
    assert res.value <= 1e-10 and res.iterations <= 30
    assert res.termination_reason == "gradient-tol"


def test_bfgs_rosenbrock():
    res = bfgs_minimize(rosenbrock(), [-1.2, 1.0], grad_tol=1e-10, max_iter=500)
    assert res.value <= 1e-8
    assert np.allclose(res.coords, 1.0, atol=1e-4)


@pytest.mark.parametrize("method", [bfgs_minimize, lbfgs_minimize])
def test_already_optimal(method):
    res = method(quadratic(spd(3)), np.zeros(3))
    assert res.iterations == 0 and res.termination_reason == "gradient-tol"


def test_lbfgs_large_quadratic():
    n = 1000
    d = np.geomspace(1, 100, n)
    obj = ObjectiveHandle(n, lambda x: (0.5 * x @ (d * x), d * x))
    x0 = np.random.default_rng(1).standard_normal(n)
    g0 = np.linalg.norm(d * x0)
    res = lbfgs_minimize(obj, x0, grad_tol=1e-6, max_iter=200)
    assert res.gradient_norm <= 1e-6 * g0


def test_lbfgs_matches_bfgs_with_full_memory():
    Q = spd(8, seed=3, cond=50)
    b = np.arange(8.0)
    x0 = np.ones(8)
    xs_b, xs_l = [], []
    bfgs_minimize(quadratic(Q, b), x0, max_iter=5, callback=lambda it, x, f, g: xs_b.append(x.copy()))
    lbfgs_minimize(quadratic(Q, b), x0, memory=8, max_iter=5, h0_scaling="first",
                   callback=lambda it, x, f, g: xs_l.append(x.copy()))
    assert len(xs_b) == len(xs_l) == 5
    for a, c in zip(xs_b, xs_l):
        assert np.abs(a - c).max() <= 1e-8


def test_hook_sequence_and_callback_stop():
    seen = []
    res = lbfgs_minimize(quadratic(spd(4)), np.ones(4), grad_tol=1e-14, max_iter=50,
                         per_iteration_hook=seen.append,
                         callback=lambda it, x, f, g: "enough" if it == 3 else None)
    assert seen == [0, 1, 2]
    assert res.termination_reason == "enough" and res.iterations == 3


def test_infinite_values_rejected():
    # +inf outside x > 0.5 forces backtracking
    def ev(x):
        if x[0] < 0.5:
            return np.inf, np.zeros(1)
        return (x[0] - 0.6) ** 2, np.array([2 * (x[0] - 0.6)])

    res = bfgs_minimize(ObjectiveHandle(1, ev), [3.0], grad_tol=1e-10)
    assert res.coords[0] == pytest.approx(0.6, abs=1e-6)
    with pytest.raises(ValueError):
        bfgs_minimize(ObjectiveHandle(1, ev), [0.0])


def test_line_search_failure():
    # gradient points the wrong way, so no step can satisfy Armijo
    obj = ObjectiveHandle(1, lambda x: (float(x[0] ** 2), np.array([-1.0])))
    res = bfgs_minimize(obj, [1.0], armijo=Armijo(max_backtracks=5))
    assert res.termination_reason == "line-search-fail"


def test_lbfgs_rejects_bad_memory():
    with pytest.raises(ValueError):
        lbfgs_minimize(quadratic(spd(2)), np.ones(2), memory=0)


@given(st.integers(0, 10_000), st.sampled_from([bfgs_minimize, lbfgs_minimize]))
@settings(max_examples=25, deadline=None)
def test_armijo_and_monotone(seed, method):
    rng = np.random.default_rng(seed)
    Q = spd(6, seed=seed, cond=1e3)
    b = rng.standard_normal(6)
    obj = quadratic(Q, b)
    c1 = 1e-4
    history = []

    def cb(it, x, f, g):
        history.append((x.copy(), f, g.copy()))

    x0 = rng.standard_normal(6)
    f0, g0 = obj.evaluate(x0)
    res = method(obj, x0, max_iter=40, callback=cb)
    prev_x, prev_f, prev_g = x0, f0, g0
    for x, f, g in history:
        s = x - prev_x
        # Armijo: f(x + s) <= f(x) + c1 g.s with s = alpha d
        assert f <= prev_f + c1 * prev_g @ s + 1e-12 * abs(prev_f)
        prev_x, prev_f, prev_g = x, f, g
    assert res.value <= f0


def test_deterministic():
    a = bfgs_minimize(rosenbrock(), [-1.2, 1.0], max_iter=20)
    b = bfgs_minimize(rosenbrock(), [-1.2, 1.0], max_iter=20)
    assert np.array_equal(a.coords, b.coords)
