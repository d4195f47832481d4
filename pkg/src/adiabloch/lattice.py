"""Bravais lattices, their duals, and Brillouin-zone grids.

Conventions
-----------
Basis vectors are stored as rows.  The dual basis satisfies
``dual_basis[i] @ basis[j] == 2*pi*delta_ij``.

Reduced (fractional) coordinates of a quasimomentum ``k`` are
``beta_j = k . gamma_j / (2*pi)`` so that ``k = sum_j beta_j gamma*_j``.
The Brillouin zone is the half-open box ``beta_j in [-1/2, 1/2)``.

A grid of sizes ``(N_1, ..., N_d)`` holds the points
``beta_j = m_j / N_j - 1/2`` for ``m_j = 0 .. N_j - 1``, flattened in
C order.  It contains the zone center exactly when every ``N_j`` is even,
and it is closed under ``k -> -k`` modulo the dual lattice for any sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLatticeError, GridError

TWO_PI = 2.0 * np.pi
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Lattice:
    basis: np.ndarray
    dual_basis: np.ndarray
    cell_volume: float

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def bz_volume(self) -> float:
        return TWO_PI**self.dim / self.cell_volume

    def dual_coords(self, k):
        """Reduced coordinates ``beta`` of quasimomenta ``k`` (shape ``(..., d)``)."""
        return np.asarray(k, dtype=float) @ self.basis.T / TWO_PI

    def from_dual_coords(self, beta):
        return np.asarray(beta, dtype=float) @ self.dual_basis

    def dual_vector(self, n):
        """Cartesian dual-lattice vector for integer coordinates ``n``."""
        return np.asarray(n, dtype=float) @ self.dual_basis

    def real_coords(self, x):
        """Fractional coordinates of real-space points with respect to ``basis``."""
        return np.asarray(x, dtype=float) @ self.dual_basis.T / TWO_PI

    def from_real_coords(self, alpha):
        return np.asarray(alpha, dtype=float) @ self.basis


def make_lattice(basis) -> Lattice:
    """Build a lattice from ``d`` basis vectors given as rows.

    >>> make_lattice([[2 * np.pi]]).dual_basis
    array([[1.]])
    """
    b = np.atleast_2d(np.asarray(basis, dtype=float))
    if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] not in (1, 2, 3):
        raise DegenerateLatticeError(
            f"basis must be d vectors of length d with d in 1..3, got shape {b.shape}"
        )
    if not np.all(np.isfinite(b)):
        raise DegenerateLatticeError("basis contains non-finite entries")
    det = float(np.linalg.det(b))
    scale = float(np.prod(np.linalg.norm(b, axis=1)))
    if scale == 0.0 or abs(det) <= 1e-12 * scale:
        raise DegenerateLatticeError(
            "basis vectors are linearly dependent", det=det
        )
    dual = TWO_PI * np.linalg.inv(b).T
    b.setflags(write=False)
    dual.setflags(write=False)
    return Lattice(basis=b, dual_basis=dual, cell_volume=abs(det))


@dataclass(frozen=True, eq=False)
class KGrid:
    lattice: Lattice
    sizes: tuple
    frac: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def steps(self) -> np.ndarray:
        """Cartesian step vectors ``gamma*_j / N_j`` (rows)."""
        return self.lattice.dual_basis / np.asarray(self.sizes, dtype=float)[:, None]

    @property
    def weight(self) -> float:
        """Quadrature weight of one grid point for integrals over the zone."""
        return self.lattice.bz_volume / self.n_points

    def index(self, m) -> int:
        return int(np.ravel_multi_index(tuple(np.mod(m, self.sizes)), self.sizes))

    def negated_index(self) -> np.ndarray:
        """Flat index of the grid point equivalent to ``-k`` for every point."""
        m = np.indices(self.sizes).reshape(self.lattice.dim, -1)
        neg = np.mod(np.asarray(self.sizes)[:, None] - m, np.asarray(self.sizes)[:, None])
        return np.ravel_multi_index(tuple(neg), self.sizes)


def bz_grid(lat: Lattice, sizes) -> KGrid:
    sizes = tuple(int(s) for s in np.atleast_1d(sizes))
    if len(sizes) != lat.dim:
        raise GridError(f"expected {lat.dim} grid sizes, got {len(sizes)}")
    if any(s < 1 for s in sizes):
        raise GridError(f"grid sizes must be positive, got {sizes}")
    axes = [np.arange(n) / n - 0.5 for n in sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    frac = np.stack([m.ravel() for m in mesh], axis=-1)
    points = frac @ lat.dual_basis
    frac.setflags(write=False)
    points.setflags(write=False)
    return KGrid(lattice=lat, sizes=sizes, frac=frac, points=points)


def reduce_to_bz(lat: Lattice, k):
    """Map ``k`` into the half-open Brillouin zone.

    The returned ``k'`` satisfies ``beta_j(k') in [-1/2, 1/2)`` and
    ``k - k'`` lies in the dual lattice.
    """
    beta = lat.dual_coords(k)
    # points within rounding of the lower face -1/2 stay on it
    beta = beta - np.floor(beta + 0.5 + BOUNDARY_TOL)
    beta = np.where(beta >= 0.5 - BOUNDARY_TOL, beta - 1.0, beta)
    return beta @ lat.dual_basis
