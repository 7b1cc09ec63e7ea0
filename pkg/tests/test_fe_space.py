from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stabfem.fe_space import (
    ConfigurationError,
    build_spaces,
    default_quadrature_degree,
    nodal_interpolant_value,
    project_gradient_to_patches,
    simplex_quadrature,
)
from stabfem.mesh import Mesh

from conftest import spaces, unit_mesh


def right_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]), np.zeros(3, dtype=int))


def monomial_exact(a, b, c):
    # int over a cell of l1^a l2^b l3^c divided by its area
    return 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


@pytest.mark.parametrize("degree", range(1, 11))
def test_quadrature_exactness(degree):
    bary, w = simplex_quadrature(degree)
    assert abs(w.sum() - 1.0) <= 1e-14 and np.all(w > 0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                got = np.sum(w * bary[:, 0] ** a * bary[:, 1] ** b * bary[:, 2] ** c)
                assert abs(got - monomial_exact(a, b, c)) <= 1e-14


def test_default_degree_covers_2k_plus_2():
    assert default_quadrature_degree(1) >= 4 and default_quadrature_degree(2) >= 7


def test_dimensions_n2():
    V, Q = spaces(2, 1)
    assert V.dim == 18 and len(V.scalar.interior_nodes) == 1
    assert np.allclose(V.scalar.nodes[V.scalar.interior_nodes], [[0.5, 0.5]])
    assert Q.dim == 9 and abs(Q.mean_vector.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 5])
def test_p2_node_count(n):
    V, Q = spaces(n, 2)
    assert Q.dim == (2 * n + 1) ** 2 and V.dim == 2 * Q.dim
    assert len(V.boundary_dofs) == 2 * 8 * n


def test_unsupported_degree():
    with pytest.raises(ConfigurationError):
        build_spaces(unit_mesh(2), 3)


@pytest.mark.parametrize("k", [1, 2])
def test_partition_of_unity(k):
    s = spaces(4, k)[0].scalar
    assert np.abs(s.phi.sum(axis=1) - 1.0).max() <= 1e-13
    assert np.abs(s.grads.sum(axis=2)).max() <= 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_mass_and_stiffness_reproduce_polynomials(k):
    s = spaces(3, k)[0].scalar
    x = s.interpolate(lambda x, y: x)
    y = s.interpolate(lambda x, y: y)
    one = np.ones(s.n_nodes)
    assert abs(x @ s.mass @ y - 0.25) <= 1e-14
    assert abs(one @ s.mass @ one - 1.0) <= 1e-14
    assert abs(x @ s.stiffness @ x - 1.0) <= 1e-13
    assert abs(x @ s.stiffness @ y) <= 1e-13
    if k == 2:
        xx = s.interpolate(lambda x, y: x * x)
        assert abs(xx @ s.mass @ one - 1.0 / 3.0) <= 1e-14
        assert abs(xx @ s.stiffness @ xx - 4.0 / 3.0) <= 1e-13


def test_p2_values_match_function():
    s = spaces(3, 2)[0].scalar
    f = lambda x, y: 1 + 2 * x - y + 3 * x * y - x * x + 0.5 * y * y
    vals = s.values(s.interpolate(f))
    q = s.qpoints
    assert np.abs(vals - f(q[..., 0], q[..., 1])).max() <= 1e-13


def test_mean_vector_and_remove_mean(rng):
    _, Q = spaces(4, 1)
    assert abs(Q.domain_area - 1.0) <= 1e-12
    p = Q.remove_mean(rng.standard_normal(Q.dim))
    assert abs(Q.mean_vector @ p) <= 1e-14


def test_velocity_layout():
    V, _ = spaces(2, 1)
    u = V.interpolate(lambda x, y: (x, 2 * y))
    ux, uy = V.split(u)
    assert np.allclose(ux, V.scalar.nodes[:, 0]) and np.allclose(uy, 2 * V.scalar.nodes[:, 1])
    G = V.gradients(u)
    assert np.allclose(G[..., 0, 0], 1) and np.allclose(G[..., 1, 1], 2) and np.allclose(G[..., 0, 1], 0)
    ext = V.extend(np.arange(len(V.interior_dofs), dtype=float) + 1)
    assert np.all(ext[V.boundary_dofs] == 0)


# ---- patch projection

@pytest.mark.parametrize("k", [1, 2])
def test_projection_needs_patches(k):
    with pytest.raises(ConfigurationError):
        spaces(4, k)[0].scalar.patch_projection


@pytest.mark.parametrize("k", [1, 2])
def test_projection_orthogonal_and_idempotent(k, rng):
    s = spaces(4, k, True)[0].scalar
    P = s.patch_projection
    w = rng.standard_normal(s.dx.shape + (2,))
    pw = project_gradient_to_patches(P, w)
    residual = P.moments(w - pw)
    assert np.abs(residual).max() <= 1e-11
    assert np.abs(P.project(pw) - pw).max() <= 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_projection_fixes_patch_polynomials(k, rng):
    s = spaces(4, k, True)[0].scalar
    P = s.patch_projection
    coef = rng.standard_normal((P.n_patches, P.n_basis))
    w = np.einsum("kqa,ka->kq", P.basis, coef[P.parent])
    assert np.abs(P.project(w) - w).max() <= 1e-12


def test_linear_pressure_gradient_in_range():
    s = spaces(4, 1, True)[0].scalar
    p = s.interpolate(lambda x, y: 3 * x - 2 * y)
    g = s.gradients(p)
    assert np.abs(s.patch_projection.project(g) - g).max() <= 1e-12


# ---- nodal interpolant

def test_nodal_interpolant_examples():
    s = build_spaces(right_triangle(), 1)[0].scalar
    one = np.ones(3)
    l3 = np.array([0.0, 0.0, 1.0])
    assert nodal_interpolant_value(one, one, 0, s) == pytest.approx(0.5, abs=1e-15)
    assert nodal_interpolant_value(l3, l3, 0, s) == pytest.approx(1 / 6, abs=1e-15)
    assert nodal_interpolant_value(l3, -l3, 0, s) == pytest.approx(-1 / 6, abs=1e-15)


def test_nodal_interpolant_p2_rejected():
    s = spaces(2, 2)[0].scalar
    with pytest.raises(ConfigurationError):
        nodal_interpolant_value(np.ones(s.n_nodes), np.ones(s.n_nodes), 0, s)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_linear_interpolation_exact(a, b, c):
    s = spaces(3, 1)[0].scalar
    f = lambda x, y: a + b * x + c * y
    q = s.qpoints
    assert np.abs(s.values(s.interpolate(f)) - f(q[..., 0], q[..., 1])).max() <= 1e-12 * (1 + abs(a) + abs(b) + abs(c))


def test_cellwise_projection_constant_monitored(rng):
    # ||(Pi_h - id) u||_K <= C h_K ||grad u||_K; C is observed, not pinned
    ratios = []
    for n in (4, 8, 16):
        V, _ = spaces(n, 1)
        s = V.scalar
        u = s.interpolate(lambda x, y: np.sin(3 * x) * np.cos(2 * y))
        vals = s.values(u)
        mean = (s.dx * vals).sum(1) / s.area
        err = np.sqrt((s.dx * (vals - mean[:, None]) ** 2).sum(1))
        g = s.gradients(u)
        gn = np.sqrt((s.dx[..., None] * g ** 2).sum((1, 2)))
        ok = gn > 1e-12
        ratios.append((err[ok] / (s.mesh.h[ok] * gn[ok])).max())
    assert max(ratios) < 1.0
