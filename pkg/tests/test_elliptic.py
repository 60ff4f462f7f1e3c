import numpy as np
import pytest

from asinv.asdecomp import mass_matrix
from asinv.data import gen_noisy_elliptic
from asinv.elliptic import (
    EllipticProblem,
    InvalidMediumError,
    gradient,
    misfit,
    misfit_and_gradient,
    solve_forward,
)
from asinv.mesh import build_unit_square_mesh
from asinv.phantoms import six_discs


def sine(mesh):
    x, y = mesh.node_coords.T
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def fd_error(u, problem, v, t=1e-5):
    M = mass_matrix(problem.mesh)
    g = gradient(u, problem)
    exact = g @ (M @ v)
    fd = (misfit(u + t * v, problem) - misfit(u - t * v, problem)) / (2 * t)
    return abs(exact - fd) / abs(exact)


def random_case(rng, n=16):
    m = build_unit_square_mesh(n)
    u = 1 + rng.uniform(0, 1, m.num_nodes)
    obs = rng.standard_normal(m.num_nodes)
    v = np.zeros(m.num_nodes)
    v[m.interior] = rng.standard_normal(len(m.interior))
    return u, EllipticProblem(m, obs), v


def test_manufactured_solution():
    m = build_unit_square_mesh(64)
    p = EllipticProblem(m, f=2 * np.pi**2 * sine(m))
    y = solve_forward(np.ones(m.num_nodes), p)
    assert np.abs(y - sine(m)).max() <= 3e-3
    assert not y[m.boundary_mask].any()


@pytest.mark.parametrize("solver", ["direct", "cg"])
def test_scaling_invariance(solver):
    m = build_unit_square_mesh(16)
    rng = np.random.default_rng(0)
    u = 1 + rng.random(m.num_nodes)
    f = rng.random(m.num_nodes)
    y1 = solve_forward(u, EllipticProblem(m, f=f, solver=solver))
    y2 = solve_forward(7 * u, EllipticProblem(m, f=7 * f, solver=solver))
    assert np.abs(y1 - y2).max() <= 1e-9 * np.abs(y1).max()


def test_maximum_principle():
    m = build_unit_square_mesh(16)
    y = solve_forward(np.ones(m.num_nodes), EllipticProblem(m))
    assert np.all(y[m.interior] > 0)


def test_medium_floor():
    m = build_unit_square_mesh(8)
    u = np.ones(m.num_nodes)
    u[10] = 0.0
    with pytest.raises(InvalidMediumError):
        solve_forward(u, EllipticProblem(m))
    u[10] = np.nan
    with pytest.raises(InvalidMediumError):
        misfit_and_gradient(u, EllipticProblem(m, np.zeros(m.num_nodes)))


def test_misfit_examples():
    m = build_unit_square_mesh(16)
    u = 1 + 0.3 * sine(m)
    y = solve_forward(u, EllipticProblem(m))
    assert misfit(u, EllipticProblem(m, y)) <= 1e-20
    assert misfit(u, EllipticProblem(m, y + 0.4)) == pytest.approx(0.5 * 0.16, rel=1e-12)


def test_misfit_regression_anchor():
    m = build_unit_square_mesh(64)
    y, delta, _ = gen_noisy_elliptic(six_discs(), 0.02, m, seed=0)
    J = misfit(np.ones(m.num_nodes), EllipticProblem(m, y.values))
    assert J == pytest.approx(0.04442717848131659, rel=1e-9)
    assert delta == pytest.approx(0.07752379970747629, rel=1e-9)


def test_gradient_zero_at_exact_data():
    m = build_unit_square_mesh(16)
    u = 1 + 0.5 * sine(m)
    p = EllipticProblem(m, solve_forward(u, EllipticProblem(m)))
    assert np.abs(gradient(u, p)).max() <= 1e-10


def test_gradient_vanishes_on_boundary():
    u, p, _ = random_case(np.random.default_rng(4))
    assert not gradient(u, p)[p.mesh.boundary_mask].any()


def test_gradient_finite_differences():
    rng = np.random.default_rng(123)
    errs = [fd_error(*random_case(rng)) for _ in range(20)]
    assert max(errs) <= 1e-5


def test_cg_and_direct_agree():
    u, p, _ = random_case(np.random.default_rng(5))
    q = EllipticProblem(p.mesh, p.observation, solver="cg")
    J1, g1, _ = misfit_and_gradient(u, p)
    J2, g2, _ = misfit_and_gradient(u, q)
    assert J1 == pytest.approx(J2, rel=1e-9)
    assert np.allclose(g1, g2, rtol=1e-7, atol=1e-12 * np.abs(g1).max())


def test_deterministic():
    u, p, _ = random_case(np.random.default_rng(6))
    assert misfit(u, p) == misfit(u, p)
