"""Plane-wave fibers ``H(k)`` of periodic Hamiltonians and the discrete Zak transform.

In the plane-wave basis ``{exp(i G.y)}`` the fiber operator
``1/2 (-i grad_y + k)^2 + V(y)`` has matrix elements
``1/2 |k+G|^2 delta_GG' + Vhat(G-G')``.  The spin-orbit variant adds
``1/4 sigma . (grad V x (-i grad_y + k))`` on a plane-wave x spin basis
(index ``2*i + s``), using ``grad V <-> i G Vhat(G)``.

A Bloch function at ``k + lambda`` (``lambda`` in the dual lattice) is the
one at ``k`` with its coefficients relabelled, ``c_G(k+lambda) = c_{G+lambda}(k)``.
:meth:`PlaneWaveBasis.shift_map` provides that relabelling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FiberSolveError, GapClosedError, GridError
from .lattice import KGrid, Lattice
from .potential import FourierPotential

TOL_DEG = 1e-9

_PAULI = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)


@dataclass(frozen=True, eq=False)
class PlaneWaveBasis:
    lattice: Lattice
    cutoff: float
    indices: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    _lookup: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.indices)

    def position(self, n) -> int:
        """Basis position of integer dual coordinates ``n`` or ``-1``."""
        return self._lookup.get(tuple(int(c) for c in n), -1)

    def shift_map(self, shift) -> np.ndarray:
        """Position of ``G + shift`` for every basis vector ``G`` (``-1`` if outside)."""
        shift = np.asarray(shift, dtype=int)
        return np.array([self.position(n + shift) for n in self.indices], dtype=int)

    def max_index(self) -> np.ndarray:
        return np.abs(self.indices).max(axis=0)


def make_basis(lat: Lattice, cutoff: float) -> PlaneWaveBasis:
    """All dual vectors with ``|G| <= cutoff``, ordered by length then index."""
    if not cutoff >= 0:
        raise GridError(f"plane-wave cutoff must be non-negative, got {cutoff}")
    bound = np.floor(cutoff * np.linalg.norm(lat.basis, axis=1) / (2 * np.pi) + 1e-9).astype(int)
    ranges = [np.arange(-b, b + 1) for b in bound]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*ranges, indexing="ij")], axis=-1)
    G = mesh @ lat.dual_basis
    norm2 = np.einsum("ij,ij->i", G, G)
    keep = norm2 <= cutoff**2 * (1 + 1e-12) + 1e-12
    mesh, G, norm2 = mesh[keep], G[keep], norm2[keep]
    order = sorted(range(len(mesh)), key=lambda i: (round(norm2[i], 9), tuple(mesh[i])))
    mesh, G = mesh[order], G[order]
    lookup = {tuple(int(c) for c in n): i for i, n in enumerate(mesh)}
    mesh.setflags(write=False)
    G.setflags(write=False)
    return PlaneWaveBasis(lat, float(cutoff), mesh, G, lookup)


def shell_radii(lat: Lattice, n_shells: int) -> np.ndarray:
    """Distinct lengths ``|G|`` of the first ``n_shells + 1`` shells (shell 0 is ``G=0``)."""
    reach = n_shells + 1
    while True:
        basis = make_basis(lat, reach * float(np.max(np.linalg.norm(lat.dual_basis, axis=1))))
        radii = np.unique(np.round(np.linalg.norm(basis.vectors, axis=1), 9))
        if len(radii) > n_shells:
            return radii[: n_shells + 1]
        reach += 1


def cutoff_for_shells(lat: Lattice, n_shells: int) -> float:
    """Cutoff radius that includes exactly ``n_shells`` nonzero shells."""
    radii = shell_radii(lat, n_shells)
    # radii are rounded to 1e-9; land strictly between this shell and the next
    return float(radii[-1]) + 1e-8


def _embed3(v):
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3,), dtype=v.dtype)
    out[..., : v.shape[-1]] = v
    return out


class FiberAssembler:
    """Caches the k-independent parts of ``H(k)`` for one potential and basis."""

    def __init__(self, V: FourierPotential, basis: PlaneWaveBasis, spin_orbit: bool = False):
        if V.lattice is not basis.lattice and not np.allclose(V.lattice.basis, basis.lattice.basis):
            raise GridError("potential and basis are built on different lattices")
        self.V = V
        self.basis = basis
        self.spin_orbit = bool(spin_orbit)
        diff = basis.indices[:, None, :] - basis.indices[None, :, :]
        self.vmat = np.zeros((basis.size, basis.size), dtype=complex)
        for n, v in V.coeffs.items():
            self.vmat[np.all(diff == np.asarray(n), axis=-1)] = v
        if self.spin_orbit:
            # gradient of V in Fourier space: i (G - G') Vhat(G - G'), padded to 3D
            dG = _embed3(basis.vectors[:, None, :] - basis.vectors[None, :, :])
            self._gradv = 1j * dG * self.vmat[..., None]
            self._G3 = _embed3(basis.vectors)

    @property
    def size(self) -> int:
        return self.basis.size * (2 if self.spin_orbit else 1)

    def kinetic(self, k) -> np.ndarray:
        q = np.asarray(k, dtype=float) + self.basis.vectors
        return 0.5 * np.einsum("ij,ij->i", q, q)

    def matrix(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if k.shape != (self.basis.lattice.dim,) or not np.all(np.isfinite(k)):
            raise GridError(f"quasimomentum must be a finite {self.basis.lattice.dim}-vector, got {k}")
        h = self.vmat.copy()
        h[np.diag_indices_from(h)] += self.kinetic(k)
        if not self.spin_orbit:
            return 0.5 * (h + h.conj().T)
        p = self._G3 + _embed3(k)  # (k + G') acting on the ket
        # (grad V x p)_a = eps_ajl dV_j p_l, with p evaluated at G'
        cross = np.cross(self._gradv, p[None, :, :])
        so = 0.25 * np.einsum("ija,abc->ibjc", cross, _PAULI).reshape(self.size, self.size)
        out = np.kron(h, np.eye(2)) + so
        return 0.5 * (out + out.conj().T)

    def velocity(self, k) -> np.ndarray:
        """Diagonal of ``dH/dk`` in the scalar plane-wave basis, shape ``(N_pw, d)``."""
        if self.spin_orbit:
            raise NotImplementedError("velocity matrices are only provided for scalar fibers")
        return np.asarray(k, dtype=float) + self.basis.vectors


@dataclass(frozen=True, eq=False)
class FiberMatrix:
    k: np.ndarray
    basis: PlaneWaveBasis
    matrix: np.ndarray = field(repr=False)
    spin_orbit: bool = False


def build_fiber(lat: Lattice, V: FourierPotential, k, basis: PlaneWaveBasis, spin_orbit: bool = False) -> FiberMatrix:
    if basis.lattice is not lat and not np.allclose(basis.lattice.basis, lat.basis):
        raise GridError("basis was built for a different lattice")
    asm = FiberAssembler(V, basis, spin_orbit)
    k = np.asarray(k, dtype=float)
    return FiberMatrix(k, basis, asm.matrix(k), spin_orbit)


def _tie_break(evals, evecs, tol=TOL_DEG):
    """Deterministic column order and phase inside degenerate clusters."""
    n = len(evals)
    order = np.arange(n)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and evals[stop] - evals[stop - 1] < tol:
            stop += 1
        if stop - start > 1:
            block = evecs[:, start:stop]
            mags = np.abs(block)
            top = mags.argmax(axis=0)
            keys = sorted(range(stop - start), key=lambda j: (-round(mags[top[j], j], 12), top[j]))
            order[start:stop] = start + np.asarray(keys)
        start = stop
    evecs = evecs[:, order]
    evals = evals[order]
    top = np.abs(evecs).argmax(axis=0)
    phase = evecs[top, np.arange(evecs.shape[1])]
    evecs = evecs * (np.abs(phase) / phase)[None, :]
    return evals, evecs


def solve_fiber(F: FiberMatrix, n_bands: int | None = None):
    """Lowest ``n_bands`` eigenpairs in ascending order.

    Each eigenvector has its largest-modulus component real and positive;
    columns inside clusters closer than ``TOL_DEG`` are ordered by
    descending largest component, then by that component's basis index.
    """
    size = F.matrix.shape[0]
    n_bands = size if n_bands is None else int(n_bands)
    if not 1 <= n_bands <= size:
        raise GridError(f"requested {n_bands} bands from a {size}x{size} fiber")
    return _eigh_sorted(F.matrix, n_bands, F.k)


def _eigh_sorted(matrix, n_bands, k):
    try:
        evals, evecs = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise FiberSolveError(
            f"eigensolver failed at k={np.asarray(k).tolist()} for size {matrix.shape[0]}: {exc}",
            k=np.asarray(k), size=matrix.shape[0],
        ) from exc
    return _tie_break(evals[:n_bands], evecs[:, :n_bands])


@dataclass(frozen=True, eq=False)
class BandData:
    grid: KGrid
    basis: PlaneWaveBasis
    energies: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    spin_orbit: bool = False
    window: tuple | None = None
    gap: float | None = None
    potential: FourierPotential | None = field(default=None, repr=False)

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]

    def with_window(self, n: int, m: int = 1) -> "BandData":
        g = check_gap(self, (n, m))
        return BandData(self.grid, self.basis, self.energies, self.vectors,
                        self.spin_orbit, (n, m), g, self.potential)


def band_structure(lat, V, grid: KGrid, basis: PlaneWaveBasis, n_bands: int,
                   spin_orbit: bool = False, workers: int = 1) -> BandData:
    asm = FiberAssembler(V, basis, spin_orbit)
    if not 1 <= n_bands <= asm.size:
        raise GridError(f"requested {n_bands} bands from a fiber of size {asm.size}")

    def solve(k):
        return _eigh_sorted(asm.matrix(k), n_bands, k)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, grid.points))
    else:
        results = [solve(k) for k in grid.points]
    energies = np.array([r[0] for r in results])
    vectors = np.array([r[1] for r in results])
    return BandData(grid, basis, energies, vectors, spin_orbit, potential=V)


def check_gap(bd: BandData, window) -> float:
    """Minimum over the grid of the distance between the window and the other computed bands.

    ``window`` is ``(n, m)`` selecting bands ``n .. n+m-1``.  Band ``n+m``
    must have been computed so that the gap is bounded from above.
    """
    n, m = int(window[0]), int(window[1])
    if n < 0 or m < 1:
        raise GridError(f"invalid band window {window}")
    if n + m >= bd.n_bands:
        raise GridError(
            f"band window [{n}, {n + m - 1}] touches the last computed band "
            f"({bd.n_bands - 1}); compute more bands to bound the gap"
        )
    E = bd.energies
    gaps = E[:, n + m] - E[:, n + m - 1]
    if n > 0:
        gaps = np.minimum(gaps, E[:, n] - E[:, n - 1])
    return float(max(gaps.min(), 0.0))


def require_gap(bd: BandData, window, tol: float = 1e-8) -> float:
    g = check_gap(bd, window)
    if g <= tol:
        raise GapClosedError(f"band window {tuple(window)} is not isolated (gap {g:.3e})", gap=g)
    return g


# --- discrete Zak transform -------------------------------------------------

def _box_layout(shape, grid: KGrid):
    d = grid.lattice.dim
    if len(shape) < d:
        raise GridError(f"wavefunction has {len(shape)} axes, lattice needs {d}")
    n_y = []
    for j in range(d):
        cells = grid.sizes[j]
        if shape[j] % cells:
            raise GridError(
                f"axis {j}: {shape[j]} samples are not commensurate with {cells} cells"
            )
        n_y.append(shape[j] // cells)
    return tuple(n_y)


def cell_positions(lat: Lattice, n_y) -> np.ndarray:
    """Cartesian sample points ``y_s = sum_j (s_j/n_j) gamma_j`` of one cell, shape ``(*n_y, d)``."""
    axes = [np.arange(n) / n for n in n_y]
    frac = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return frac @ lat.basis


def box_positions(lat: Lattice, cells, n_y) -> np.ndarray:
    """Sample points of a box of ``cells`` unit cells, shape ``(*(cells*n_y), d)``."""
    axes = [np.arange(c * n) / n for c, n in zip(cells, n_y)]
    frac = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return frac @ lat.basis


def zak_forward(psi, lat: Lattice, grid: KGrid) -> np.ndarray:
    """``phi(k, y) = N^{-1/2} sum_gamma exp(-i k.(y+gamma)) psi(y+gamma)``.

    ``psi`` holds samples on the box built by :func:`box_positions`; the
    result has shape ``(grid.n_points, *n_y)`` with ``k`` in grid order.
    The ``N^{-1/2}`` weight makes the map unitary for plain sums of squares.
    """
    psi = np.asarray(psi, dtype=complex)
    d = lat.dim
    n_y = _box_layout(psi.shape, grid)
    cells = grid.sizes
    split = []
    for c, n in zip(cells, n_y):
        split += [c, n]
    a = psi.reshape(split)
    a = a.transpose(list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2)))
    # k.gamma_c = 2 pi sum_j (m_j/N_j - 1/2) c_j
    sign = np.ones(cells)
    for j, c in enumerate(cells):
        shape = [1] * d
        shape[j] = c
        sign = sign * ((-1.0) ** np.arange(c)).reshape(shape)
    a = a * sign.reshape(cells + (1,) * d)
    a = np.fft.fftn(a, axes=tuple(range(d))) / np.sqrt(grid.n_points)
    a = a.reshape((grid.n_points,) + n_y)
    ky = np.einsum("kd,...d->k...", grid.points, cell_positions(lat, n_y))
    return a * np.exp(-1j * ky)


def zak_inverse(phi, lat: Lattice, grid: KGrid) -> np.ndarray:
    """Inverse of :func:`zak_forward`: ``psi(x) = N^{-1/2} sum_k exp(i k.x) phi(k, [x])``."""
    phi = np.asarray(phi, dtype=complex)
    d = lat.dim
    if phi.shape[0] != grid.n_points:
        raise GridError(f"fiber data has {phi.shape[0]} k-points, grid has {grid.n_points}")
    n_y = phi.shape[1:]
    if len(n_y) != d:
        raise GridError("fiber data must be (n_k, *cell_samples)")
    cells = grid.sizes
    ky = np.einsum("kd,...d->k...", grid.points, cell_positions(lat, n_y))
    a = (phi * np.exp(1j * ky)).reshape(cells + tuple(n_y))
    a = np.fft.ifftn(a, axes=tuple(range(d))) * np.sqrt(grid.n_points)
    sign = np.ones(cells)
    for j, c in enumerate(cells):
        shape = [1] * d
        shape[j] = c
        sign = sign * ((-1.0) ** np.arange(c)).reshape(shape)
    a = a * sign.reshape(cells + (1,) * d)
    order = []
    for j in range(d):
        order += [j, d + j]
    a = a.transpose(order)
    return a.reshape(tuple(c * n for c, n in zip(cells, n_y)))


def cell_samples(basis: PlaneWaveBasis, coeffs, n_y) -> np.ndarray:
    """Periodic function ``|M|^{-1/2} sum_G c_G exp(iG.y)`` on the cell sample grid.

    ``coeffs`` may carry leading batch axes, ``(..., N_pw)``.  Sampling is
    exact (alias-free) when ``n_y[j] > 2 * max|n_j|``.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    n_y = tuple(int(n) for n in n_y)
    if np.any(2 * basis.max_index() >= np.asarray(n_y)):
        raise GridError(f"{n_y} samples per cell alias the plane-wave basis")
    lat = basis.lattice
    batch = coeffs.shape[:-1]
    grid = np.zeros(batch + n_y, dtype=complex)
    idx = tuple(np.mod(basis.indices[:, j], n_y[j]) for j in range(lat.dim))
    grid[(Ellipsis,) + idx] = coeffs
    axes = tuple(range(len(batch), len(batch) + lat.dim))
    return np.fft.ifftn(grid, axes=axes) * (np.prod(n_y) / np.sqrt(lat.cell_volume))


def cell_coefficients(basis: PlaneWaveBasis, samples) -> np.ndarray:
    """Plane-wave coefficients of cell samples (inverse of :func:`cell_samples`)."""
    samples = np.asarray(samples, dtype=complex)
    lat = basis.lattice
    n_y = samples.shape[-lat.dim:]
    axes = tuple(range(samples.ndim - lat.dim, samples.ndim))
    f = np.fft.fftn(samples, axes=axes) * (np.sqrt(lat.cell_volume) / np.prod(n_y))
    idx = tuple(np.mod(basis.indices[:, j], n_y[j]) for j in range(lat.dim))
    return f[(Ellipsis,) + idx]
