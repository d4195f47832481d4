import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adiabloch.errors import FiberSolveError, GapClosedError, GridError
from adiabloch.fiber import (FiberMatrix, band_structure, box_positions, build_fiber, cell_coefficients,
                             cell_samples, check_gap, cutoff_for_shells, make_basis, require_gap,
                             solve_fiber, zak_forward, zak_inverse)
from adiabloch.lattice import bz_grid, make_lattice
from adiabloch.potential import potential_from_coeffs


def free_reference(lat, basis, k, n):
    q = k + basis.vectors
    return np.sort(0.5 * np.einsum("ij,ij->i", q, q))[:n]


def test_basis_ball(square):
    basis = make_basis(square, 3.5)
    assert basis.position((0, 0)) == 0
    assert np.all(np.linalg.norm(basis.vectors, axis=1) <= 3.5 + 1e-12)
    for n in basis.indices:
        assert basis.position(-n) >= 0
    # the ball is complete: every dual vector inside the radius is present
    rng = np.arange(-5, 6)
    inside = [(a, b) for a in rng for b in rng if np.hypot(a, b) <= 3.5]
    assert len(inside) == basis.size
    with pytest.raises(GridError):
        make_basis(square, -1.0)


def test_cutoff_for_shells(chain):
    assert make_basis(chain, cutoff_for_shells(chain, 5)).size == 11


def test_free_fiber_diagonal(square):
    basis = make_basis(square, 3.0)
    V = potential_from_coeffs(square, {})
    H = build_fiber(square, V, [0.0, 0.0], basis).matrix
    np.testing.assert_allclose(H, np.diag(0.5 * np.sum(basis.vectors**2, axis=1)))
    assert np.min(np.diag(H).real) == 0.0


def test_constant_shift(square):
    basis = make_basis(square, 3.0)
    k = np.array([0.2, -0.1])
    E0, _ = solve_fiber(build_fiber(square, potential_from_coeffs(square, {}), k, basis))
    E1, _ = solve_fiber(build_fiber(square, potential_from_coeffs(square, {(0, 0): 0.7}), k, basis))
    np.testing.assert_allclose(E1, E0 + 0.7, atol=1e-13)


def test_cutoff_convergence(chain, cosine):
    E10 = solve_fiber(build_fiber(chain, cosine, [0.0], make_basis(chain, 10)), 1)[0][0]
    E40 = solve_fiber(build_fiber(chain, cosine, [0.0], make_basis(chain, 40)), 1)[0][0]
    assert abs(E10 - E40) < 1e-8


def test_one_by_one(chain):
    F = FiberMatrix(np.zeros(1), make_basis(chain, 0.0), np.array([[2.5 + 0j]]))
    E, U = solve_fiber(F)
    assert E[0] == 2.5 and U[0, 0] == 1.0


def test_free_folding(chain):
    basis = make_basis(chain, 5)
    E, _ = solve_fiber(build_fiber(chain, potential_from_coeffs(chain, {}), [0.25], basis), 3)
    np.testing.assert_allclose(E, [0.5 * 0.25**2, 0.5 * 0.75**2, 0.5 * 1.25**2], atol=1e-14)


def test_hermitian_and_orthonormal(two_harmonic, square):
    basis = make_basis(square, 4.0)
    for so in (False, True):
        F = build_fiber(square, two_harmonic, [0.13, -0.31], basis, spin_orbit=so)
        H = F.matrix
        assert np.max(np.abs(H - H.conj().T)) <= 1e-13 * np.max(np.abs(H))
        E, U = solve_fiber(F, 10)
        # ascending up to the degeneracy tolerance inside tie-broken clusters
        assert np.all(np.diff(E) >= -1e-9)
        np.testing.assert_allclose(U.conj().T @ U, np.eye(10), atol=1e-10)


def test_nonfinite_k(chain, cosine):
    with pytest.raises(GridError):
        build_fiber(chain, cosine, [np.nan], make_basis(chain, 3))


def test_solver_failure_reports_k(chain, cosine, monkeypatch):
    def boom(_):
        raise np.linalg.LinAlgError("no convergence")
    monkeypatch.setattr(np.linalg, "eigh", boom)
    with pytest.raises(FiberSolveError) as err:
        solve_fiber(build_fiber(chain, cosine, [0.1], make_basis(chain, 3)))
    assert err.value.details["size"] == 7
    assert "k=" in str(err.value)


def test_free_bands(square):
    basis = make_basis(square, 6.0)
    grid = bz_grid(square, (5, 4))
    bd = band_structure(square, potential_from_coeffs(square, {}), grid, basis, 6)
    for k, E in zip(grid.points, bd.energies):
        np.testing.assert_allclose(E, free_reference(square, basis, k, 6), atol=1e-12)


def test_band_periodicity_and_relabel(chain, cosine):
    basis = make_basis(chain, 12)
    k = np.array([0.3])
    E, U = solve_fiber(build_fiber(chain, cosine, k, basis), 4)
    E2, U2 = solve_fiber(build_fiber(chain, cosine, k + chain.dual_basis[0], basis), 4)
    np.testing.assert_allclose(E2, E, atol=1e-10)
    # c_G(k + gamma*) = c_{G + gamma*}(k) up to a phase, wherever both are in the basis
    m = basis.shift_map((1,))
    ok = m >= 0
    for n in range(4):
        a, b = U2[ok, n], U[m[ok], n]
        assert abs(abs(np.vdot(a, b)) - 1) < 1e-8


def test_threads_agree(square, two_harmonic):
    basis = make_basis(square, 3.0)
    grid = bz_grid(square, (4, 4))
    a = band_structure(square, two_harmonic, grid, basis, 3)
    b = band_structure(square, two_harmonic, grid, basis, 3, workers=3)
    np.testing.assert_array_equal(a.energies, b.energies)


def test_gap(chain, cosine):
    grid = bz_grid(chain, 64)
    bd = band_structure(chain, cosine, grid, make_basis(chain, 10), 3)
    assert np.all(bd.energies[:, 1] - bd.energies[:, 0] > 0)
    assert check_gap(bd, (0, 1)) > 0.1
    with pytest.raises(GridError):
        check_gap(bd, (1, 2))
    free = band_structure(chain, potential_from_coeffs(chain, {}), grid, make_basis(chain, 10), 3)
    assert check_gap(free, (0, 1)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(GapClosedError):
        require_gap(free, (0, 1))


def test_gap_ignores_internal_crossing(square):
    # free particle: bands 1..4 are degenerate at k=0 but the window [0, 4] is gapped from band 5 only if
    # the complement is separated; the measurement must never look inside the window
    basis = make_basis(square, 4.0)
    grid = bz_grid(square, (4, 4))
    bd = band_structure(square, potential_from_coeffs(square, {}), grid, basis, 8)
    E = bd.energies
    g = check_gap(bd, (1, 2))
    expect = min((E[:, 3] - E[:, 2]).min(), (E[:, 1] - E[:, 0]).min())
    assert g == pytest.approx(max(expect, 0.0))


def test_kramers_1d(chain, cosine):
    basis = make_basis(chain, 8)
    grid = bz_grid(chain, 32)
    bd = band_structure(chain, cosine, grid, basis, 12, spin_orbit=True)
    assert np.max(np.abs(bd.energies[:, 0::2] - bd.energies[:, 1::2])) < 1e-9


def test_kramers_2d_inversion(square, two_harmonic):
    basis = make_basis(square, 3.0)
    grid = bz_grid(square, (4, 4))
    bd = band_structure(square, two_harmonic, grid, basis, 8, spin_orbit=True)
    assert np.max(np.abs(bd.energies[:, 0::2] - bd.energies[:, 1::2])) < 1e-9


def test_kramers_at_zero_without_inversion(square):
    V = potential_from_coeffs(square, {(1, 0): 1.0, (-1, 0): 1.0, (0, 1): 0.5j, (0, -1): -0.5j,
                                       (1, 1): 0.3, (-1, -1): 0.3})
    basis = make_basis(square, 3.0)
    E, _ = solve_fiber(build_fiber(square, V, [0.0, 0.0], basis, spin_orbit=True), 8)
    assert np.max(np.abs(E[0::2] - E[1::2])) < 1e-9
    E, _ = solve_fiber(build_fiber(square, V, [0.17, 0.31], basis, spin_orbit=True), 8)
    assert np.max(np.abs(E[0::2] - E[1::2])) > 1e-6


def test_zak_single_plane_wave(chain):
    grid = bz_grid(chain, 8)
    x = box_positions(chain, grid.sizes, (16,))
    k0 = grid.points[3]
    psi = np.exp(1j * x @ k0)
    phi = zak_forward(psi, chain, grid)
    weight = np.sum(np.abs(phi) ** 2, axis=1)
    assert np.argmax(weight) == 3
    assert np.sum(np.delete(weight, 3)) < 1e-20 * weight[3] + 1e-24


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4))
def test_zak_unitary_round_trip(seed, n1, n2):
    lat = make_lattice([[1.0, 0.0], [0.4, 1.3]])
    grid = bz_grid(lat, (n1, n2))
    rng = np.random.default_rng(seed)
    shape = (n1 * 3, n2 * 4)
    psi = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    phi = zak_forward(psi, lat, grid)
    assert np.sum(np.abs(phi) ** 2) == pytest.approx(np.sum(np.abs(psi) ** 2), rel=1e-12)
    np.testing.assert_allclose(zak_inverse(phi, lat, grid), psi, atol=1e-10)


def test_zak_zero_and_bloch_wave(chain, cosine):
    grid = bz_grid(chain, 6)
    assert np.all(zak_inverse(np.zeros((6, 8)), chain, grid) == 0)
    basis = make_basis(chain, 3)
    E, U = solve_fiber(build_fiber(chain, cosine, grid.points[2], basis), 1)
    phi = np.zeros((6, 8), dtype=complex)
    u = cell_samples(basis, U[:, 0], (8,))
    phi[2] = u
    psi = zak_inverse(phi, chain, grid)
    x = box_positions(chain, grid.sizes, (8,))[:, 0]
    expect = np.exp(1j * grid.points[2, 0] * x) * np.tile(u, 6) / np.sqrt(6)
    np.testing.assert_allclose(psi, expect, atol=1e-12)
    np.testing.assert_allclose(cell_coefficients(basis, u), U[:, 0], atol=1e-12)


def test_zak_incommensurate(chain):
    with pytest.raises(GridError):
        zak_forward(np.zeros(10), chain, bz_grid(chain, 4))
    with pytest.raises(GridError):
        cell_samples(make_basis(chain, 4), np.zeros(9), (8,))
