import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adiabloch.errors import GridError, RealnessError
from adiabloch.potential import (make_pump_path, potential_at_time, potential_from_coeffs,
                                 reversed_path, sample_real_space, sliding_cosine_pump, static_path)


def random_real(lat, rng, n_terms=5, reach=2):
    entries = {}
    while len(entries) < 2 * n_terms:
        n = tuple(int(c) for c in rng.integers(-reach, reach + 1, lat.dim))
        if any(n):
            v = complex(rng.normal(), rng.normal())
            entries[n] = v
            entries[tuple(-c for c in n)] = np.conj(v)
    entries[(0,) * lat.dim] = rng.normal()
    return potential_from_coeffs(lat, entries)


def test_two_term_cosine(cosine):
    x = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_allclose(sample_real_space(cosine, x).real, 2 * np.cos(x[:, 0]), atol=1e-14)
    assert sample_real_space(cosine, [[0.0]])[0].real == pytest.approx(2.0)


def test_free_particle(chain):
    V = potential_from_coeffs(chain, {})
    assert V.coeffs == {}
    assert np.all(sample_real_space(V, np.random.default_rng(0).normal(size=(7, 1))) == 0)


def test_realness_violation_names_offender(chain):
    with pytest.raises(RealnessError) as err:
        potential_from_coeffs(chain, {(1,): 1j, (-1,): 1j})
    assert "G=" in str(err.value)
    assert err.value.details["G"] in ([1], [-1])


def test_bad_index(chain):
    with pytest.raises(GridError):
        potential_from_coeffs(chain, {(1, 0): 1.0})


def test_direct_sum_oracle(square):
    rng = np.random.default_rng(3)
    V = random_real(square, rng)
    x = rng.uniform(-10, 10, size=(64, 2))
    direct = np.array([sum(v * np.exp(1j * square.dual_vector(n) @ xi) for n, v in V.coeffs.items()) for xi in x])
    np.testing.assert_allclose(sample_real_space(V, x), direct, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_real_and_periodic(seed):
    from adiabloch.lattice import make_lattice
    lat = make_lattice([[1.0, 0.2], [0.3, 1.4]])
    rng = np.random.default_rng(seed)
    V = random_real(lat, rng, n_terms=3)
    x = rng.uniform(-5, 5, size=(16, 2))
    vals = sample_real_space(V, x)
    assert np.max(np.abs(vals.imag)) < 1e-12
    for g in lat.basis:
        np.testing.assert_allclose(sample_real_space(V, x + g), vals, atol=1e-12)


def _linear_path(chain):
    a = potential_from_coeffs(chain, {(1,): 1.0, (-1,): 1.0})
    b = potential_from_coeffs(chain, {(1,): 3.0, (-1,): 3.0, (2,): 1.0, (-2,): 1.0})
    return make_pump_path([0.0, 1.0, 2.0], [a, b, a], 1, cyclic=True), a, b


def test_path_at_snapshots_and_midpoint(chain):
    path, a, b = _linear_path(chain)
    assert potential_at_time(path, 1.0) is b
    mid = potential_at_time(path, 0.5)
    assert mid[(1,)] == pytest.approx(2.0)
    assert mid[(2,)] == pytest.approx(0.5)
    assert potential_at_time(path, 2.0).coeffs == potential_at_time(path, 0.0).coeffs


def test_path_errors(chain):
    path, a, b = _linear_path(chain)
    with pytest.raises(GridError):
        potential_at_time(path, 2.5)
    with pytest.raises(GridError):
        make_pump_path([0.0, 1.0], [a, b], 1, cyclic=True)
    with pytest.raises(GridError):
        make_pump_path([0.0, 0.0], [a, a], 1)
    with pytest.raises(GridError):
        make_pump_path([0.0, 1.0], [a, b], 1, interpolation="trigonometric")


def test_reversed_path(chain):
    path, a, b = _linear_path(chain)
    rev = reversed_path(path)
    for t in (0.0, 0.3, 1.2, 2.0):
        assert potential_at_time(rev, t).coeffs == pytest.approx(potential_at_time(path, 2.0 - t).coeffs)


@pytest.mark.parametrize("ramp", [False, True])
def test_trigonometric_matches_exact_drive(chain, ramp):
    path = sliding_cosine_pump(chain, n_snapshots=64, ramp=ramp, interpolation="trigonometric")
    for t in np.linspace(0.0, 1.0, 23):
        tau = t - np.sin(2 * np.pi * t) / (2 * np.pi) if ramp else t
        assert potential_at_time(path, t)[(1,)] == pytest.approx(np.exp(-2j * np.pi * tau), abs=1e-12)
        V = potential_at_time(path, t)
        assert V[(-1,)] == pytest.approx(np.conj(V[(1,)]), abs=1e-14)


def test_ramp_traces_same_loop(chain):
    a = sliding_cosine_pump(chain, n_snapshots=32)
    b = sliding_cosine_pump(chain, n_snapshots=32, ramp=True)
    np.testing.assert_allclose(a.coefficient_table()[[0, 16, 32]], b.coefficient_table()[[0, 16, 32]], atol=1e-14)


def test_static_path(cosine):
    path = static_path(cosine, n_snapshots=5)
    assert path.cyclic
    assert potential_at_time(path, 0.37).coeffs == pytest.approx(cosine.coeffs)
