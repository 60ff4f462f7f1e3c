import numpy as np
import pytest
import scipy.linalg as sla

from asinv.asdecomp import (
    Basis,
    as_basis,
    laplace_basis,
    l2_project,
    mass_matrix,
    mu_eps,
    tv_energy,
)
from asinv.mesh import Mesh, assemble_weighted_stiffness, build_unit_square_mesh
from asinv.phantoms import Phantom, PolygonInclusion, six_discs, three_inclusions


@pytest.fixture(scope="module")
def three_n100():
    m = build_unit_square_mesh(100)
    ph = three_inclusions()
    return m, ph, as_basis(m, ph.on_mesh(m, deviation=True).values, 6)


def test_mu_eps_formula():
    m = build_unit_square_mesh(8)
    assert np.allclose(mu_eps(m, np.full(m.num_nodes, 3.0), 1e-8), 1e8)
    x = m.node_coords[:, 0]
    assert np.allclose(mu_eps(m, x, 1e-3), 1 / np.sqrt(1 + 1e-6), rtol=1e-14)
    assert np.allclose(mu_eps(m, 2 * x, 1e-8), 0.5, atol=1e-12)
    w = mu_eps(m, np.random.default_rng(0).standard_normal(m.num_nodes), 1e-2)
    assert np.all((w > 0) & (w <= 1e2))
    with pytest.raises(ValueError):
        mu_eps(m, x, 0.0)


def test_constant_medium_gives_scaled_laplace_spectrum():
    m = build_unit_square_mesh(16)
    eps = 1e-4
    a = as_basis(m, np.ones(m.num_nodes), 5, eps=eps)
    b = laplace_basis(m, 5)
    assert np.allclose(a.eigenvalues * eps, b.eigenvalues, rtol=1e-8)
    # modes 2 and 3 are degenerate, compare the spanned subspaces via projectors
    M = mass_matrix(m)
    Pa = a.functions @ a.functions.T @ M
    Pb = b.functions @ b.functions.T @ M
    assert np.abs(Pa - Pb).max() <= 1e-6


def test_basis_invariants(three_n100):
    m, _, b = three_n100
    assert np.abs(b.gram() - np.eye(6)).max() <= 1e-8
    assert not b.functions[m.boundary_mask].any()
    assert np.all(np.diff(b.eigenvalues) >= 0)
    # sign convention: largest-magnitude entry is positive
    for f in b.functions.T:
        assert f[np.argmax(np.abs(f))] > 0


def test_three_inclusion_gap(three_n100):
    _, _, b = three_n100
    lam = b.eigenvalues
    assert lam[2] / lam[3] <= 1e-6
    assert lam[3] / lam[2] >= 1e4


def test_six_disc_gap_and_localization():
    m = build_unit_square_mesh(64)
    ph = six_discs()
    b = as_basis(m, ph.on_mesh(m).values, 7)
    assert b.eigenvalues[6] / b.eigenvalues[5] >= 1e4
    M = mass_matrix(m)
    owners = []
    for k in range(6):
        f = b.functions[:, k]
        fractions = []
        for disc in ph.inclusions:
            dist = np.hypot(*(m.node_coords - np.array(disc.center)).T)
            g = f * (dist < disc.radius + 2 * m.h)
            fractions.append(g @ M @ g)
        assert max(fractions) >= 0.9
        owners.append(int(np.argmax(fractions)))
    assert sorted(owners) == list(range(6))


def test_l2_project_idempotent_and_orthogonal():
    m = build_unit_square_mesh(12)
    b = laplace_basis(m, 6)
    beta, p = l2_project(b.functions[:, 0], b)
    assert np.allclose(beta, np.eye(6)[0], atol=1e-12)
    assert np.allclose(p, b.functions[:, 0], atol=1e-12)
    v = np.random.default_rng(1).standard_normal(m.num_nodes)
    beta, p = l2_project(v, b)
    M = mass_matrix(m)
    assert np.abs(b.functions.T @ (M @ (v - p))).max() <= 1e-10
    w = v - p
    _, q = l2_project(w, b)
    assert np.abs(q).max() <= 1e-10
    with pytest.raises(ValueError):
        l2_project(np.ones(5), b)


def test_three_inclusion_projection(three_n100):
    m, ph, b = three_n100
    u = ph.on_mesh(m, deviation=True).values
    sub = Basis(m, b.functions[:, :3])
    _, p = l2_project(u, sub)
    M = mass_matrix(m)
    r = u - p
    # nodal piecewise constants lie in the span of the first three modes up to the solver tolerance
    assert np.sqrt(r @ M @ r / (u @ M @ u)) <= 1e-6


def test_tv_energy():
    m = build_unit_square_mesh(100)
    assert tv_energy(m, 1.0, np.zeros(m.num_nodes)) == 0.0
    sq = Phantom("square", (PolygonInclusion(((0.3, 0.3), (0.7, 0.3), (0.7, 0.7), (0.3, 0.7)), 1.0),))
    u = sq.on_mesh(m).values
    tv = tv_energy(m, mu_eps(m, u), u)
    assert abs(tv - 1.6) <= 0.25 * 1.6
    v = np.random.default_rng(0).standard_normal(m.num_nodes)
    w = mu_eps(m, u)
    assert tv_energy(m, w, 3 * v) == pytest.approx(9 * tv_energy(m, w, v), rel=1e-12)
    assert tv_energy(m, w, v) >= 0


def test_as_basis_matches_dense_pencil():
    m = Mesh(10)
    u = np.random.default_rng(2).standard_normal(m.num_nodes)
    b = as_basis(m, u, 4, eps=1e-2)
    idx = m.interior
    A = assemble_weighted_stiffness(m, mu_eps(m, u, 1e-2))[idx][:, idx].toarray()
    lam = sla.eigh(A, mass_matrix(m)[idx][:, idx].toarray(), eigvals_only=True)
    assert np.allclose(b.eigenvalues, lam[:4], rtol=1e-8)
    with pytest.raises(ValueError):
        as_basis(m, u, 0)
