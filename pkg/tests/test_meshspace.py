import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldgbspde.errors import DegenerateBasisError
from ldgbspde.meshspace import (CoefField, ElementMesh, Space, assemble_mass, eval_field, l2_error, l2_norm,
                                make_space, make_uniform_mesh)
from ldgbspde.polybasis import BasisSet, make_basis
from ldgbspde.projection import project_l2


def test_uniform_mesh_widths():
    m = make_uniform_mesh(2 * np.pi, 10)
    np.testing.assert_allclose(m.widths, np.pi / 5, rtol=1e-14)
    assert m.N == 10
    assert abs(make_uniform_mesh(2 * np.pi, 50).h - 2 * np.pi / 50) < 1e-15
    assert make_uniform_mesh(1.0, 2).edges.tolist() == [0.0, 0.5, 1.0]


@pytest.mark.parametrize("b,N", [(0.0, 4), (-1.0, 4), (1.0, 1), (np.inf, 3)])
def test_invalid_mesh(b, N):
    with pytest.raises(ValueError):
        make_uniform_mesh(b, N)


def test_nonuniform_mesh_invariants():
    m = ElementMesh(np.array([0.0, 0.1, 0.5, 0.55, 2.0]))
    assert abs(m.widths.sum() - m.b) <= 1e-12 * m.b
    assert m.h == pytest.approx(1.45)
    with pytest.raises(ValueError):
        ElementMesh(np.array([0.0, 0.5, 0.5, 1.0]))


def test_locate_sides_and_bounds():
    m = make_uniform_mesh(1.0, 4)
    assert m.locate(0.25, "left") == 0
    assert m.locate(0.25, "right") == 1
    assert m.locate(0.0, "left") == 0
    assert m.locate(1.0, "right") == 3
    with pytest.raises(ValueError):
        m.locate(1.0001)
    with pytest.raises(ValueError):
        m.locate(-1e-9)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_legendre_mass_is_diagonal_and_scales_with_h(k):
    m = make_uniform_mesh(2 * np.pi, 7)
    mm = assemble_mass(m, make_basis("legendre", k))
    d = 2.0 / (2 * np.arange(k + 1) + 1)
    for j in range(m.N):
        np.testing.assert_allclose(mm.A[j], np.diag(0.5 * m.widths[j] * d), atol=1e-13)
        np.testing.assert_allclose(mm.A[j] @ mm.A_inv[j], np.eye(k + 1), atol=1e-10)


def test_lagrange_k1_mass_by_hand():
    # hat functions on a unit cell
    m = ElementMesh(np.array([0.0, 1.0, 2.0]))
    mm = assemble_mass(m, make_basis("lagrange", 1))
    np.testing.assert_allclose(mm.A[0], [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-14)


def test_singular_mass_is_rejected():
    bad = BasisSet("legendre", 2, np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(DegenerateBasisError):
        assemble_mass(make_uniform_mesh(1.0, 3), bad)


def test_constant_field_everywhere():
    s = make_space(2.0, 5, 3, "lagrange")
    f = project_l2(lambda x: 0 * x + 2.5, s)
    for x in np.linspace(0, 2, 23):
        for side in ("left", "right"):
            assert eval_field(f, x, side) == pytest.approx(2.5, abs=1e-12)


def test_discontinuous_field_one_sided_limits():
    s = make_space(2.0, 2, 1)
    coef = np.zeros(s.shape)
    coef[0, 0], coef[0, 1] = 1.0, 7.0
    f = CoefField(s, coef)
    assert eval_field(f, 1.0, "left") == 1.0
    assert eval_field(f, 1.0, "right") == 7.0
    with pytest.raises(ValueError):
        eval_field(f, 2.5)


@given(k=st.integers(1, 6), N=st.integers(2, 6), seed=st.integers(0, 10**6))
def test_eval_against_direct_polynomials(k, N, seed):
    """Legendre coefficients evaluated by the field agree with numpy's legval per cell."""
    rng = np.random.default_rng(seed)
    s = make_space(3.0, N, k)
    c = rng.normal(size=s.shape)
    f = CoefField(s, c)
    x = rng.uniform(0, 3.0, 20)
    cell = s.mesh.locate(x)
    xi = (x - s.mesh.centers[cell]) / (0.5 * s.mesh.widths[cell])
    direct = np.array([np.polynomial.legendre.legval(xi[i], c[:, cell[i]]) for i in range(x.size)])
    assert np.max(np.abs(eval_field(f, x) - direct)) <= 1e-12 * max(1.0, np.max(np.abs(c)))


def test_trace_consistency():
    rng = np.random.default_rng(3)
    s = make_space(1.0, 6, 3, "lagrange")
    f = CoefField(s, rng.normal(size=s.shape))
    right = s.trace_right(f.coef)
    for j in range(s.N):
        assert eval_field(f, s.mesh.edges[j + 1], "left") == pytest.approx(right[j], abs=1e-12)


def test_norms_of_simple_fields():
    s = make_space(2 * np.pi, 8, 2)
    assert l2_norm(CoefField(s, s.zeros())) == 0.0
    one = project_l2(lambda x: np.ones_like(x), s)
    assert l2_norm(one) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-13)


def test_projection_error_of_cos_decreases():
    e32 = l2_error(project_l2(np.cos, make_space(2 * np.pi, 32, 2)), np.cos)
    e64 = l2_error(project_l2(np.cos, make_space(2 * np.pi, 64, 2)), np.cos)
    assert e32 <= 1e-4
    assert e64 < e32


@given(seed=st.integers(0, 10**6), k=st.integers(1, 5))
def test_parseval_for_legendre(seed, k):
    rng = np.random.default_rng(seed)
    s = make_space(2.0, 5, k)
    c = rng.normal(size=s.shape)
    A = s.mass.A
    expected = sum(A[j, l, l] * c[l, j] ** 2 for j in range(s.N) for l in range(k + 1))
    assert l2_norm(CoefField(s, c)) ** 2 == pytest.approx(expected, rel=1e-10)
    assert float(s.sq_norm(c)) == pytest.approx(expected, rel=1e-10)


@given(seed=st.integers(0, 10**6))
def test_nodal_projection_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    s = make_space(1.0, 4, 3, "lagrange")
    c = rng.normal(size=s.shape)
    np.testing.assert_allclose(s.project_nodal(s.nodal(c)), c, atol=1e-12)


def test_coef_field_validation():
    s = make_space(1.0, 3, 2)
    with pytest.raises(ValueError):
        CoefField(s, np.zeros((2, 3)))
    bad = s.zeros()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        CoefField(s, bad)
    assert isinstance(Space(s.mesh, s.basis), Space)
