import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdhom.coefficients import ConstantProfile, two_phase
from cdhom.grid import (
    BoxGrid,
    GeometryError,
    StaggeredField,
    build_box_complex,
    periodic_rescale,
    sample_coefficient,
)
from cdhom.hilbert import MatrixCoefficient, MultiplicationCoefficient, adjoint


@pytest.mark.parametrize("N", [2, 3, (2, 3, 4)])
def test_complex_identities_and_exactness(N):
    cx = build_box_complex(BoxGrid(N))
    assert abs(cx.C.matrix @ cx.G.matrix).max() == 0
    assert abs(cx.D.matrix @ cx.C.matrix).max() == 0
    assert cx.exact
    for r in cx.reports.values():
        assert r.rank_A0 == r.nullity_A1


def test_grid_validation():
    with pytest.raises(GeometryError):
        BoxGrid(1)
    with pytest.raises(GeometryError):
        BoxGrid(2, (1.0, -1.0, 1.0))


@pytest.mark.parametrize("tag", ["node", "edge", "face", "cell"])
def test_weights_sum_to_volume(tag):
    g = BoxGrid((2, 3, 4), (1.0, 2.0, 0.5))
    for s in g.component_slices(tag):
        assert np.isclose(g.weights(tag)[s].sum(), g.volume)


def test_dims_scale():
    g2, g4 = BoxGrid(2), BoxGrid(4)
    assert g2.dim("cell") == 8 and g4.dim("cell") == 64
    assert g2.dim("node") == 27 and g4.dim("edge") == 3 * 4 * 25


def test_grad_kills_constants():
    cx = build_box_complex(BoxGrid(3))
    assert np.abs(cx.G(np.ones(cx.dims["node"]))).max() == 0


def test_dstar_constant_is_boundary_supported():
    g = BoxGrid(4)
    cx = build_box_complex(g)
    v = cx.Ds(np.ones(cx.dims["cell"]))
    inner = ~g.boundary_mask("face")
    assert np.abs(v[inner]).max() == 0
    assert np.abs(v[~inner]).max() > 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_integration_by_parts(seed):
    rng = np.random.default_rng(seed)
    g = BoxGrid((2, 3, 2), (1.0, 0.7, 1.3))
    cx = build_box_complex(g, certify=False)
    for op in (cx.G, cx.C, cx.D):
        A = adjoint(op)
        x = rng.standard_normal(op.domain.dim) + 1j * rng.standard_normal(op.domain.dim)
        y = rng.standard_normal(op.codomain.dim)
        lhs, rhs = op.codomain.inner(op(x), y), op.domain.inner(x, A(y))
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_sample_constant_one_is_identity():
    a = sample_coefficient(1.0, BoxGrid(2), "edge")
    assert isinstance(a, MultiplicationCoefficient)
    assert np.all(a.values == 1)


def test_sample_midpoints():
    g = BoxGrid(2)
    b = sample_coefficient(lambda X: 2 + X[:, 0], g, "cell")
    x1 = g.positions("cell")[:, 0]
    np.testing.assert_allclose(b.values[x1 < 0.5], 2.25)
    np.testing.assert_allclose(b.values[x1 > 0.5], 2.75)


def test_sample_two_phase_by_hand():
    g = BoxGrid(2)
    d = two_phase(1.0, 4.0)
    a = sample_coefficient(d, g, "edge")
    x1 = g.positions("edge")[:, 0]
    # [0, 1/2) -> 1, [1/2, 1) -> 4, and x1 = 1 wraps to 0
    expect = np.where((x1 >= 0.5) & (x1 < 1.0), 4.0, 1.0)
    np.testing.assert_array_equal(a.values.real, expect)


def test_sample_rejects_nan():
    with pytest.raises(ValueError):
        sample_coefficient(lambda X: np.full(len(X), np.nan), BoxGrid(2), "cell")


def test_sample_diagonal_and_full_matrix():
    g = BoxGrid(2)
    a = sample_coefficient(np.diag([1.0, 2.0, 3.0]), g, "edge")
    comp = g.component_ids("edge")
    np.testing.assert_array_equal(a.values.real, comp + 1.0)
    m = np.array([[2.0, 0.5, 0], [0.5, 2.0, 0], [0, 0, 2.0]])
    full = sample_coefficient(m, g, "face")
    assert isinstance(full, MatrixCoefficient)


def test_periodic_rescale_examples():
    d = two_phase(1.0, 4.0)
    assert periodic_rescale(d, 1) is d
    d2 = periodic_rescale(d, 2)
    assert d2(np.array([[0.3, 0.0, 0.0]]))[0] == 4.0
    c = ConstantProfile(3.0)
    X = np.random.default_rng(0).random((5, 3))
    np.testing.assert_array_equal(periodic_rescale(c, 5)(X), c(X))
    with pytest.raises(ValueError):
        periodic_rescale(d, 0)


def test_staggered_field_shape_checked():
    g = BoxGrid(2)
    with pytest.raises(ValueError):
        StaggeredField(g, "face", np.zeros(3))
    f = StaggeredField(g, "face", np.arange(g.dim("face"), dtype=float))
    assert [c.shape for c in f.components()] == g.component_shapes("face")
