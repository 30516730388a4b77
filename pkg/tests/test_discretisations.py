import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochastic_stefan.discretisations import (build, build_hmm, build_mlp1, interpolate_initial,
                                               stabilisation_residuals)
from stochastic_stefan.gdm import assemble_stiffness
from stochastic_stefan.model import exact_test1

from conftest import gd, mesh


def affine(p):
    return 2 * p[:, 0] - p[:, 1] + 3


@pytest.mark.parametrize("name", ["mesh1-01", "mesh1-03"])
def test_mlp1_affine_exact(name):
    g = gd("mlp1", name)
    v = g.interpolate(affine)
    np.testing.assert_allclose(g.gradient(v), np.tile([2.0, -1.0], (g.n_regions, 1)), atol=1e-12)
    np.testing.assert_allclose(g.cell_gradient(v), np.tile([2.0, -1.0], (mesh(name).n_cells, 1)),
                               atol=1e-12)


@pytest.mark.parametrize("name", ["mesh1-02", "hexa1-01", "hexa1-02"])
def test_hmm_affine_exact(name):
    g = gd("hmm", name)
    v = g.interpolate(affine)
    np.testing.assert_allclose(g.cell_gradient(v), np.tile([2.0, -1.0], (mesh(name).n_cells, 1)),
                               atol=1e-12)
    np.testing.assert_allclose(stabilisation_residuals(g, v), 0.0, atol=1e-12)
    np.testing.assert_allclose(g.gradient(v), np.tile([2.0, -1.0], (g.n_regions, 1)), atol=1e-12)


def test_mlp1_layout():
    m = mesh("mesh1-01")
    g = gd("mlp1", "mesh1-01")
    assert g.n_dofs == 37
    np.testing.assert_array_equal(g.boundary, m.boundary_vertices)
    np.testing.assert_array_equal(g.anchors, m.vertices)
    assert g.mass.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(g.reconstruct(g.interpolate(lambda p: np.ones(len(p)))), 1.0)


def test_mlp1_rejects_polygons():
    with pytest.raises(ValueError):
        build_mlp1(mesh("hexa1-01"))


def test_hmm_layout_hexa():
    m = mesh("hexa1-01")
    g = gd("hmm", "hexa1-01")
    assert g.n_dofs == 121 + 400
    assert g.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(g.mass > 0)
    # boundary edges are the Dirichlet dofs; cells never are
    assert not g.boundary[:121].any()
    np.testing.assert_array_equal(g.boundary[121:], m.edge_cells[:, 1] < 0)
    assert g.region_measure.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0))
def test_hmm_mass_conservation_any_r(r):
    g = build_hmm(mesh("mesh1-01"), r=r)
    assert g.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(g.mass >= 0)
    np.testing.assert_allclose(g.mass[:56], r * g.geom.cell_area, atol=1e-15)


def test_hmm_r_one_has_no_edge_mass():
    g = build_hmm(mesh("hexa1-01"), r=1.0)
    np.testing.assert_array_equal(g.mass[121:], 0.0)
    assert g.mass[:121].sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("r", [-0.1, 1.5])
def test_hmm_r_out_of_range(r):
    with pytest.raises(ValueError):
        build_hmm(mesh("mesh1-01"), r=r)


def test_build_unknown_kind():
    with pytest.raises(ValueError):
        build("dg", mesh("mesh1-01"))


def test_hmm_coercive_stabilised_form(rng):
    g = gd("hmm", "hexa1-01")
    A = assemble_stiffness(g)
    for _ in range(50):
        v = rng.standard_normal(g.n_dofs)
        G = g.gradient(v)
        assert v @ (A @ v) >= (1 - 1e-12) * (g.region_measure @ (G ** 2).sum(1))


def test_interpolate_initial_test1():
    g = gd("mlp1", "mesh1-02")
    u = interpolate_initial(g, lambda p: exact_test1(p, 0.0))
    x = g.anchors[:, 0]
    expect = np.where(x < 0, 2 * np.exp(-x), np.exp(-x))
    np.testing.assert_allclose(u, expect, rtol=1e-15)
    assert u[np.argmin(x)] == 1.0


def test_interpolate_initial_mixed_regions():
    g = gd("hmm", "mesh1-02")
    t = 0.4
    u = interpolate_initial(g, lambda p: exact_test1(p, t))
    x = g.anchors[:, 0]
    liquid = x < t
    np.testing.assert_allclose(u[liquid], 2 * np.exp(t - x[liquid]), rtol=1e-15)
    np.testing.assert_allclose(u[x > t], np.exp(t - x[x > t]), rtol=1e-15)


def test_interpolate_initial_zero():
    g = gd("hmm", "hexa1-01")
    np.testing.assert_array_equal(interpolate_initial(g, lambda p: np.zeros(len(p))), 0.0)
