import numpy as np
import pytest

from gltsaddle import grid_fem
from gltsaddle.grid_fem import UniformMesh


@pytest.mark.parametrize("bad", [0, -3, 2.5, True])
def test_mesh_rejects_bad_n(bad):
    with pytest.raises(ValueError):
        UniformMesh(bad)


def test_mesh_geometry():
    m = UniformMesh(3)
    assert m.h == pytest.approx(0.25)
    assert m.n_dofs == 9
    x1, x2 = m.nodes()
    # x runs fastest
    np.testing.assert_allclose(x1[:3], [0.25, 0.5, 0.75])
    np.testing.assert_allclose(x2[:3], [0.25, 0.25, 0.25])
    assert m.triangles().shape == (2 * 16, 3, 2)


def test_stiffness_n2_is_five_point_stencil():
    K = grid_fem.assemble_stiffness(UniformMesh(2)).toarray()
    expected = np.array([[4, -1, -1, 0], [-1, 4, 0, -1], [-1, 0, 4, -1], [0, -1, -1, 4]], float)
    np.testing.assert_allclose(K, expected, atol=1e-14)


def test_mass_total_and_symmetry():
    mesh = UniformMesh(6)
    M = grid_fem.assemble_mass(mesh)
    assert abs(M - M.T).max() == 0
    # every row of the full (boundary-inclusive) mass matrix sums to int phi_i = h^2
    x = np.ones(mesh.n_dofs)
    interior_row = (M @ x).reshape(6, 6)[2, 2]
    assert interior_row == pytest.approx(mesh.h**2, rel=1e-13)
    assert np.all(np.linalg.eigvalsh(M.toarray()) > 0)


def test_convection_rows_sum_to_zero_in_interior():
    mesh = UniformMesh(5)
    V = grid_fem.assemble_convection(mesh, (2.0, 3.0)).toarray()
    # sum_j int (c . grad phi_i) phi_j = int c . grad phi_i = 0 for interior nodes with all neighbours free
    assert abs(V.sum(axis=1).reshape(5, 5)[2, 2]) < 1e-14
    # skew part dominates: V + V^T only carries boundary terms
    assert np.allclose((V + V.T).reshape(5, 5, 5, 5)[2, 2, 2, 2], 0.0)


def test_convection_rejects_bad_c():
    with pytest.raises(ValueError):
        grid_fem.assemble_convection(UniformMesh(2), (1.0, 2.0, 3.0))


def test_load_constant_and_linearity():
    mesh = UniformMesh(4)
    f = grid_fem.assemble_load(mesh, lambda x, y: np.ones_like(x))
    np.testing.assert_allclose(f, mesh.h**2, rtol=1e-13)
    g1 = lambda x, y: x * y
    g2 = lambda x, y: np.sin(x) + y**2
    lhs = grid_fem.assemble_load(mesh, lambda x, y: 2 * g1(x, y) - 3 * g2(x, y))
    rhs = 2 * grid_fem.assemble_load(mesh, g1) - 3 * grid_fem.assemble_load(mesh, g2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def _hat(dx, dy, h):
    # P1 basis function of the (+1, +1)-diagonal triangulation centred at the origin
    return max(0.0, 1.0 - (max(dx, dy, 0.0) - min(dx, dy, 0.0)) / h)


def test_load_exact_for_quadratics():
    from scipy.integrate import dblquad

    mesh = UniformMesh(3)
    h = mesh.h
    g = lambda x, y: x**2 + 0.5 * x * y - y**2
    f = grid_fem.assemble_load(mesh, g)
    x0 = y0 = 0.5  # centre node, index 4
    integrand = lambda y, x: g(x, y) * _hat(x - x0, y - y0, h)
    ref = 0.0
    # the hat is linear on each triangle, so integrate triangle by triangle
    for a in (x0 - h, x0):
        for b in (y0 - h, y0):
            ref += dblquad(integrand, a, a + h, lambda x: b, lambda x: b + (x - a), epsabs=1e-15)[0]
            ref += dblquad(integrand, a, a + h, lambda x: b + (x - a), lambda x: b + h, epsabs=1e-15)[0]
    assert f[4] == pytest.approx(ref, rel=1e-12)


def test_interpolate():
    mesh = UniformMesh(2)
    np.testing.assert_allclose(grid_fem.interpolate(mesh, lambda x, y: x), [1 / 3, 2 / 3, 1 / 3, 2 / 3])
    np.testing.assert_allclose(grid_fem.interpolate(mesh, lambda x, y: 5.0), 5.0)
