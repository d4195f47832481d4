import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adiabloch.errors import GridError
from adiabloch.fields import Cosine, ExternalFields, Monomial, ScalarField, linear_field, symmetric_gauge, uniform_force

pt = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


def field2d():
    return ScalarField(2, (Monomial(0.7, (2, 1)), Monomial(-1.1, (0, 3)), Cosine(0.4, (1.3, -0.2), 0.5)))


@settings(max_examples=40, deadline=None)
@given(pt)
def test_derivatives_match_differences(r):
    f = field2d()
    r = np.array(r)
    h = 1e-6
    g = np.array([(f.value(r + h * e) - f.value(r - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(f.gradient(r), g, atol=1e-6)
    H = np.array([(f.gradient(r + h * e) - f.gradient(r - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(f.hessian(r), H, atol=1e-5)
    np.testing.assert_allclose(f.hessian(r), f.hessian(r).T, atol=1e-12)


def test_values_on_vectorised():
    f = field2d()
    x = np.random.default_rng(2).normal(size=(5, 3, 2))
    ref = np.array([[f.value(p) for p in row] for row in x])
    np.testing.assert_allclose(f.values_on(x), ref, atol=1e-12)
    assert f.depends_on(0) and f.depends_on(1)
    assert not linear_field([1.0, 0.0]).depends_on(1)


def test_uniform_force():
    F = uniform_force([0.5], 0.1)
    np.testing.assert_allclose(F.electric_field([3.0]), [0.5])
    assert not F.has_vector_potential
    np.testing.assert_allclose(F.magnetic_field([1.0]), 0.0)


def test_symmetric_gauge():
    F = symmetric_gauge(1.5, 0.2, E=[0.1, 0.0])
    r = np.array([0.3, -0.7])
    np.testing.assert_allclose(F.vector_potential(r), [0.75 * 0.7, 0.75 * 0.3])
    np.testing.assert_allclose(F.magnetic_field(r), [0, 0, 1.5])
    np.testing.assert_allclose(F.magnetic_field_gradient(r), 0.0)
    np.testing.assert_allclose(F.electric_field(r), [0.1, 0.0])


def test_nonuniform_field_gradient():
    # A = (0, x^2 / 2) gives B_z = x
    A = (ScalarField(2, ()), ScalarField(2, (Monomial(0.5, (2, 0)),)))
    F = ExternalFields(2, 0.1, ScalarField(2, ()), A)
    assert F.magnetic_field([0.4, 1.0])[2] == pytest.approx(0.4)
    np.testing.assert_allclose(F.magnetic_field_gradient([0.4, 1.0])[2], [1.0, 0.0])


def test_validation():
    with pytest.raises(GridError):
        ExternalFields(1, 0.0, ScalarField(1, ()))
    with pytest.raises(GridError):
        ExternalFields(2, 0.1, ScalarField(2, ()), (ScalarField(2, ()),))
