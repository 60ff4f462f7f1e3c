import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from asinv.mesh import (
    FeFunction,
    apply_dirichlet,
    assemble_mass,
    assemble_weighted_stiffness,
    build_unit_square_mesh,
    interpolate_between_meshes,
    l2_inner,
    read_grid,
    write_grid,
)


def hand_assembled(n, local_fn):
    # element loop over the grid, independent of the vectorized assembly
    N = (n + 1) ** 2
    A = np.zeros((N, N))
    h = 1.0 / n
    for j in range(n):
        for i in range(n):
            a, b = j * (n + 1) + i, j * (n + 1) + i + 1
            c, d = b + n + 1, a + n + 1
            for tri in ((a, b, c), (a, c, d)):
                pts = np.array([[(k % (n + 1)) * h, (k // (n + 1)) * h] for k in tri])
                loc = local_fn(pts)
                for r in range(3):
                    for s in range(3):
                        A[tri[r], tri[s]] += loc[r, s]
    return A


def local_mass(pts):
    e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return area / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])


def local_stiff(pts):
    T = np.column_stack([pts[1] - pts[0], pts[2] - pts[0]])
    area = 0.5 * abs(np.linalg.det(T))
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    G = ref @ np.linalg.inv(T)
    return area * G @ G.T


def test_counts_and_invalid():
    m = build_unit_square_mesh(2)
    assert (m.num_nodes, m.num_elements, m.h) == (9, 8, 0.5)
    assert len(m.elements) == 8
    with pytest.raises(ValueError):
        build_unit_square_mesh(1)


def test_production_scale_node_count():
    assert build_unit_square_mesh(400).num_nodes == 160_801


def test_boundary_mask_count():
    m = build_unit_square_mesh(10)
    assert m.boundary_mask.sum() == 40
    x, y = m.node_coords.T
    expected = (x == 0) | (x == 1) | (y == 0) | (y == 1)
    assert np.array_equal(m.boundary_mask, expected)


def test_mesh_invariants():
    m = build_unit_square_mesh(7)
    p = m.node_coords[m.elements]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert np.allclose(signed, 1 / (2 * 49))
    assert m.elements.min() >= 0 and m.elements.max() < m.num_nodes
    edges = np.sort(np.concatenate([m.elements[:, [0, 1]], m.elements[:, [1, 2]], m.elements[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    # boundary edges are shared once, interior edges twice
    assert set(counts) == {1, 2}
    assert (counts == 1).sum() == 4 * 7


@pytest.mark.parametrize("n", [2, 5, 16])
def test_mass_partition_of_unity(n):
    m = build_unit_square_mesh(n)
    for lumped in (False, True):
        assert abs(assemble_mass(m, lumped).sum() - 1.0) <= 1e-12


def test_mass_matches_hand_assembly():
    m = build_unit_square_mesh(2)
    assert np.allclose(assemble_mass(m).toarray(), hand_assembled(2, local_mass), atol=1e-15)


def test_lumped_row_sums():
    m = build_unit_square_mesh(6)
    M, ML = assemble_mass(m), assemble_mass(m, lumped=True)
    assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), ML.diagonal(), atol=1e-14)


def test_stiffness_constants_in_nullspace():
    m = build_unit_square_mesh(9)
    A = assemble_weighted_stiffness(m, np.ones(m.num_elements))
    assert np.abs(A @ np.ones(m.num_nodes)).max() <= 1e-12


def test_stiffness_matches_hand_assembly():
    m = build_unit_square_mesh(2)
    A = assemble_weighted_stiffness(m, 1.0).toarray()
    assert np.allclose(A, hand_assembled(2, local_stiff), atol=1e-14)
    # five-point-equivalent stencil at the only interior node
    assert A[4, 4] == pytest.approx(4.0)
    assert sorted(np.round(A[4][[1, 3, 5, 7]], 12)) == [-1.0] * 4


@given(st.floats(0.01, 100.0))
@settings(max_examples=20, deadline=None)
def test_stiffness_scales_linearly(c):
    m = build_unit_square_mesh(4)
    w = np.random.default_rng(0).uniform(0.5, 2.0, m.num_elements)
    A = assemble_weighted_stiffness(m, w)
    Ac = assemble_weighted_stiffness(m, c * w)
    assert np.allclose(Ac.toarray(), c * A.toarray(), rtol=1e-14, atol=0)


def test_stiffness_rejects_nonpositive_weight():
    m = build_unit_square_mesh(3)
    w = np.ones(m.num_elements)
    w[4] = 0.0
    with pytest.raises(ValueError):
        assemble_weighted_stiffness(m, w)


def test_dirichlet_reduction():
    m = build_unit_square_mesh(2)
    A = assemble_weighted_stiffness(m, 1.0)
    Ai, bi = apply_dirichlet(A, np.ones(9), m.boundary_mask)
    assert Ai.shape == (1, 1) and bi.shape == (1,)
    m = build_unit_square_mesh(4)
    A = assemble_weighted_stiffness(m, 1.0)
    Ai, _ = apply_dirichlet(A, np.zeros(m.num_nodes), m.boundary_mask)
    assert np.abs((Ai - Ai.T).toarray()).max() == 0.0
    assert np.linalg.eigvalsh(Ai.toarray()).min() > 0


def test_dirichlet_matches_constrained_full_solve():
    m = build_unit_square_mesh(4)
    A = assemble_weighted_stiffness(m, np.linspace(1, 2, m.num_elements))
    rhs = assemble_mass(m) @ np.ones(m.num_nodes)
    g = m.node_coords[:, 0] ** 2
    Ai, bi = apply_dirichlet(A, rhs, m.boundary_mask, g)
    y_red = np.linalg.solve(Ai.toarray(), bi)
    # full system with boundary rows replaced by identity
    Af = A.toarray()
    bf = rhs.copy()
    bnd = m.boundary_mask
    Af[bnd] = 0.0
    Af[bnd, bnd] = 1.0
    bf[bnd] = g[bnd]
    y_full = np.linalg.solve(Af, bf)
    assert np.allclose(y_red, y_full[m.interior], atol=1e-10)


def test_interpolation_linear_exact_and_identity():
    a, b = build_unit_square_mesh(7), build_unit_square_mesh(11)
    f = FeFunction(a, a.node_coords[:, 0] + 2 * a.node_coords[:, 1])
    g = interpolate_between_meshes(f, b)
    assert np.abs(g.values - (b.node_coords[:, 0] + 2 * b.node_coords[:, 1])).max() <= 1e-14
    same = interpolate_between_meshes(f, build_unit_square_mesh(7))
    assert np.array_equal(same.values, f.values)


def test_interpolation_smooth_error():
    a, b = build_unit_square_mesh(480), build_unit_square_mesh(400)
    x, y = a.node_coords.T
    f = FeFunction(a, np.sin(np.pi * x) * np.sin(np.pi * y))
    g = interpolate_between_meshes(f, b)
    xb, yb = b.node_coords.T
    assert np.abs(g.values - np.sin(np.pi * xb) * np.sin(np.pi * yb)).max() <= 5e-5


def test_l2_inner():
    m = build_unit_square_mesh(100)
    M = assemble_mass(m)
    one = np.ones(m.num_nodes)
    assert abs(l2_inner(M, one, one) - 1) <= 1e-12
    rng = np.random.default_rng(3)
    f, g = rng.standard_normal((2, m.num_nodes))
    assert l2_inner(M, f, g) == pytest.approx(l2_inner(M, g, f), rel=1e-14)
    x, y = m.node_coords.T
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    assert abs(l2_inner(M, s, s) - 0.25) <= 1e-3


def test_fe_function_validation():
    m = build_unit_square_mesh(3)
    with pytest.raises(ValueError):
        FeFunction(m, np.ones(5))
    bad = np.ones(m.num_nodes)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        FeFunction(m, bad)


def test_grid_round_trip(tmp_path):
    m = build_unit_square_mesh(5)
    f = FeFunction(m, np.random.default_rng(1).standard_normal(m.num_nodes), "medium")
    write_grid(tmp_path / "f.grid", f)
    g = read_grid(tmp_path / "f.grid")
    assert g.mesh.n == 5 and g.name == "medium"
    assert np.array_equal(g.values, f.values)


def test_assembled_matrices_are_symmetric_csr():
    m = build_unit_square_mesh(6)
    for A in (assemble_mass(m), assemble_weighted_stiffness(m, 2.0)):
        assert sp.isspmatrix_csr(A) or isinstance(A, sp.csr_array)
        assert abs(A - A.T).max() == 0
        A.has_sorted_indices = False
        A.sort_indices()
