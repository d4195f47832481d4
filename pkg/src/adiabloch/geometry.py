"""Bloch frames, gauge fixing, and the geometric band data.

Everything gauge-invariant is built from link overlaps
``U_j(k) = det <phi(k), phi(k + delta_j)>`` between neighbouring grid
points; at the zone boundary the right neighbour is the first grid point
shifted by a dual basis vector, represented through the frame's ``wraps``.

Sign conventions: with ``A = i <phi, grad phi>`` one has
``arg U_j ~ -delta_j . A``, so the plaquette phase is minus the curl of
``A`` times the plaquette area.  The Chern number is the plaquette sum over
``2 pi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegeneracyError,
    GapClosedError,
    GaugeError,
    GridError,
    GridTooCoarseError,
    NonQuantizedError,
)
from .fiber import BandData, require_gap

OVERLAP_MIN = 1e-6
CHERN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BlochFrame:
    """Orthonormal columns ``vectors[k]`` of shape ``(dim, m)`` on a periodic grid.

    ``wraps[j]`` maps a state at the first grid point along axis ``j`` to the
    state one full period later, as an index array into the vector
    components (``-1`` meaning zero).  ``None`` is the identity.
    """

    sizes: tuple
    points: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    wraps: tuple = field(repr=False)
    gauge: str = "raw"
    periodic: bool | None = None
    window: tuple = (0, 1)
    gap: float | None = None
    basis: object = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.sizes))

    def grid_vectors(self) -> np.ndarray:
        """Vectors reshaped to ``(*sizes, dim, m)``."""
        return self.vectors.reshape(tuple(self.sizes) + self.vectors.shape[1:])


def _apply_wrap(states, wrap):
    if wrap is None:
        return states
    out = np.zeros_like(states)
    ok = wrap >= 0
    out[..., ok, :] = states[..., wrap[ok], :]
    return out


def _spin_wrap(shift_map, spin: bool):
    if not spin:
        return shift_map
    out = np.empty(2 * len(shift_map), dtype=int)
    for s in (0, 1):
        out[s::2] = np.where(shift_map >= 0, 2 * shift_map + s, -1)
    return out


def frame_from_bands(bd: BandData, window=None, gap_tol: float = 1e-8) -> BlochFrame:
    """Raw frame of the isolated band window ``(n, m)`` of ``bd``.

    The gap to the rest of the computed spectrum is certified first.
    """
    window = tuple(window) if window is not None else (bd.window or (0, 1))
    n, m = int(window[0]), int(window[1])
    g = require_gap(bd, (n, m), gap_tol)
    grid = bd.grid
    d = grid.lattice.dim
    wraps = tuple(
        _spin_wrap(bd.basis.shift_map(np.eye(d, dtype=int)[j]), bd.spin_orbit) for j in range(d)
    )
    return BlochFrame(
        sizes=grid.sizes,
        points=grid.points,
        steps=grid.steps,
        vectors=bd.vectors[:, :, n : n + m].copy(),
        wraps=wraps,
        gauge="raw",
        window=(n, m),
        gap=g,
        basis=bd.basis,
    )


def regauge(frame: BlochFrame, phases) -> BlochFrame:
    """Multiply the frame at each grid point by ``exp(i*phases[k])`` (scalar per point)."""
    phases = np.asarray(phases, dtype=float).reshape(frame.n_points)
    vec = frame.vectors * np.exp(1j * phases)[:, None, None]
    return replace(frame, vectors=vec, gauge="raw", periodic=None)


# --- link variables ----------------------------------------------------------

def _neighbours(frame: BlochFrame, axis: int):
    """States at ``k + delta_axis`` for every grid point, in grid shape."""
    vg = frame.grid_vectors()
    nb = np.roll(vg, -1, axis=axis)
    last = [slice(None)] * frame.dim
    last[axis] = -1
    last = tuple(last)
    nb[last] = _apply_wrap(nb[last], frame.wraps[axis])
    return vg, nb


def link_overlaps(frame: BlochFrame, axis: int, check: bool = True) -> np.ndarray:
    """``U_axis(k) = det <phi(k), phi(k + delta_axis)>`` in grid shape (unnormalised)."""
    vg, nb = _neighbours(frame, axis)
    ov = np.einsum("...im,...in->...mn", vg.conj(), nb)
    if check:
        sv = np.linalg.svd(ov, compute_uv=False)
        worst = float(sv.min())
        if worst < OVERLAP_MIN:
            bad = np.unravel_index(int(np.argmin(sv.min(axis=-1))), tuple(frame.sizes))
            raise GridTooCoarseError(
                f"link overlap along axis {axis} drops to {worst:.2e} at grid index "
                f"{tuple(int(i) for i in bad)}; refine the k-grid",
                axis=axis, index=[int(i) for i in bad], overlap=worst,
            )
    return np.linalg.det(ov)


def _unit(z):
    return z / np.abs(z)


# --- gauge fixing ------------------------------------------------------------

def _polar_unitary(ov):
    u, _, vh = np.linalg.svd(ov)
    return u @ vh


def _transport_line(states, wrap, distribute=True):
    """Parallel transport along the first axis of ``states`` (shape ``(N, dim, m)``).

    Returns the transported states and the eigenphases of the leftover
    holonomy, which are spread uniformly over the line when ``distribute``.
    """
    out = states.copy()
    n = len(states)
    for i in range(1, n):
        ov = out[i - 1].conj().T @ out[i]
        out[i] = out[i] @ _polar_unitary(ov).conj().T
    closing = out[-1].conj().T @ _apply_wrap(out[0], wrap)
    hol = _polar_unitary(closing)
    if not distribute:
        return out, hol
    theta, Q = np.linalg.eig(hol)
    theta = np.angle(theta)
    # orthonormalise the eigenbasis (holonomy is unitary; eig may mix degenerate vectors)
    Q, _ = np.linalg.qr(Q)
    for i in range(n):
        out[i] = out[i] @ Q @ np.diag(np.exp(1j * theta * i / n)) @ Q.conj().T
    return out, hol


def fix_gauge(frame: BlochFrame, distribute: bool = True) -> BlochFrame:
    """Parallel-transport gauge.

    In one dimension the frame is transported along the grid and the leftover
    loop phase (the Zak phase) is spread uniformly, so the frame is periodic
    and every link carries the same phase.  With ``distribute=False`` the
    links are real-positive and the whole loop phase sits on the boundary link.

    In two dimensions (single band) the base row along axis 0 is transported
    first, then every column along axis 1; the column loop phases are
    unwrapped along axis 0.  A nonzero winding (the Chern number, up to sign)
    prevents a periodic frame and the result is flagged ``periodic=False``.
    """
    if frame.gap is not None and frame.gap <= 0:
        raise GapClosedError("cannot fix the gauge of a gapless window", gap=frame.gap)
    d = frame.dim
    if d == 1:
        out, _ = _transport_line(frame.vectors, frame.wraps[0], distribute)
        return replace(frame, vectors=out, gauge="parallel_transport", periodic=bool(distribute))
    if d != 2:
        raise GaugeError("gauge fixing is implemented for one- and two-dimensional grids")
    if frame.vectors.shape[-1] != 1:
        raise GaugeError("two-dimensional gauge fixing supports single-band windows only")
    n0, n1 = frame.sizes
    vg = frame.grid_vectors().copy()
    base, _ = _transport_line(vg[:, 0], frame.wraps[0], True)
    vg[:, 0] = base
    thetas = np.empty(n0)
    for i in range(n0):
        col, hol = _transport_line(vg[i], frame.wraps[1], distribute=False)
        vg[i] = col
        thetas[i] = np.angle(hol[0, 0])
    steps = np.diff(np.append(thetas, thetas[0]))
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    winding = int(round(steps.sum() / (2 * np.pi)))
    unwrapped = thetas[0] + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    j = np.arange(n1)
    vg = vg * np.exp(1j * np.outer(unwrapped, j) / n1)[:, :, None, None]
    vec = vg.reshape(frame.vectors.shape)
    return replace(frame, vectors=vec, gauge="parallel_transport", periodic=(winding == 0))


# --- connection, Zak phase ---------------------------------------------------

def berry_connection(frame: BlochFrame) -> np.ndarray:
    """Cartesian samples of ``A = i <phi, grad phi>`` (window trace), shape ``(n_k, d)``.

    Built from the centred link phases
    ``a_j(k) = -(arg U_j(k) + arg U_j(k - delta_j)) / 2 ~ delta_j . A(k)``.
    """
    if frame.gauge == "raw":
        raise GaugeError("berry_connection needs a gauge-fixed frame (call fix_gauge first)")
    a = np.empty((frame.n_points, frame.dim))
    for j in range(frame.dim):
        ph = np.angle(link_overlaps(frame, j))
        a[:, j] = (-0.5 * (ph + np.roll(ph, 1, axis=j))).ravel()
    return np.linalg.solve(frame.steps, a.T).T


def wilson_loops(frame: BlochFrame, axis: int = 0) -> np.ndarray:
    """Products of normalised link overlaps along ``axis``; one per transverse line."""
    U = _unit(link_overlaps(frame, axis))
    return np.prod(U, axis=axis)


def zak_phase(frame: BlochFrame, axis: int = 0):
    """Berry phase ``-arg W`` of the Wilson loop along ``axis``, in ``[0, 2 pi)``.

    Scalar for one-dimensional grids, otherwise an array over the remaining axes.
    """
    phase = np.mod(-np.angle(wilson_loops(frame, axis)), 2 * np.pi)
    phase = np.where(phase >= 2 * np.pi, 0.0, phase)
    return float(phase) if np.ndim(phase) == 0 else phase


def phase_distance(a, b):
    """Distance between angles on the circle."""
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


# --- curvature and Chern numbers ---------------------------------------------

@dataclass(frozen=True, eq=False)
class BerryField:
    curvature: np.ndarray = field(repr=False)
    chern: int | None = None
    residual: float | None = None
    connection: np.ndarray | None = field(default=None, repr=False)
    rammal_wilkinson: np.ndarray | None = field(default=None, repr=False)
    zak_phases: np.ndarray | None = field(default=None, repr=False)


def plaquette_field(frame: BlochFrame) -> np.ndarray:
    """Plaquette phases ``F`` in ``(-pi, pi]``, shape ``sizes``; plaquette ``m`` has corner ``k(m)``."""
    if frame.dim != 2:
        raise GridError("plaquette curvature needs a two-dimensional grid")
    U0 = _unit(link_overlaps(frame, 0))
    U1 = _unit(link_overlaps(frame, 1))
    loop = U0 * np.roll(U1, -1, axis=0) * np.roll(U0, -1, axis=1).conj() * U1.conj()
    return np.angle(loop)


def berry_curvature(frame: BlochFrame) -> BerryField:
    F = plaquette_field(frame)
    total = F.sum() / (2 * np.pi)
    chern = int(round(total))
    return BerryField(curvature=F, chern=chern, residual=float(abs(total - chern)))


def chern_number(bf: BerryField, tol: float = CHERN_TOL) -> int:
    total = bf.curvature.sum() / (2 * np.pi)
    c = int(round(total))
    if abs(total - c) > tol:
        raise NonQuantizedError(
            f"plaquette sum {total:.12f} is not within {tol} of an integer", total=float(total)
        )
    return c


def inverted_plaquettes(F: np.ndarray) -> np.ndarray:
    """``F`` rearranged so entry ``m`` holds the plaquette centred at ``-k_c(m)``."""
    return F[::-1, ::-1]


def rectangle_loop_phase(frame: BlochFrame, lo, hi) -> float:
    """Phase of the normalised link product around the boundary of plaquettes ``lo <= m < hi``.

    Counter-clockwise in (axis 0, axis 1); for a contractible rectangle it
    equals the plaquette sum modulo ``2 pi``.
    """
    (a0, a1), (b0, b1) = lo, hi
    U0 = _unit(link_overlaps(frame, 0))
    U1 = _unit(link_overlaps(frame, 1))
    n0, n1 = frame.sizes
    prod = 1.0 + 0j
    for i in range(a0, b0):
        prod *= U0[i % n0, a1 % n1]
    for j in range(a1, b1):
        prod *= U1[b0 % n0, j % n1]
    for i in range(a0, b0):
        prod *= np.conj(U0[i % n0, b1 % n1])
    for j in range(a1, b1):
        prod *= np.conj(U1[a0 % n0, j % n1])
    return float(np.angle(prod))


# --- Rammal-Wilkinson --------------------------------------------------------

def _rw_single(E, C, q, n, tol):
    """``M`` at one k from energies ``E`` (bands), vectors ``C`` (pw, bands), velocities ``q`` (pw, d)."""
    d = q.shape[1]
    dE = E - E[n]
    others = np.arange(len(E)) != n
    close = np.abs(dE[others]) < tol
    if np.any(close):
        m = int(np.arange(len(E))[others][np.argmax(close)])
        raise DegeneracyError(
            f"band {n} is within {tol} of band {m}", band=n, other=m, split=float(abs(dE[m]))
        )
    # v^j_{mn} = <phi_m| (k+G)_j |phi_n>
    v = np.einsum("gm,gj,g->jm", C.conj(), q, C[:, n])  # v[j, m] = v^j_{mn}
    w = np.zeros(len(E))
    w[others] = 1.0 / dE[others]
    # M_l = 1/2 i eps_lij sum_m v^i_{nm} v^j_{mn} / (E_m - E_n), with v^i_{nm} = conj(v^i_{mn})
    T = np.einsum("im,jm,m->ij", v.conj(), v, w)
    if d == 1:
        return 0.0, np.zeros(len(E))
    if d == 2:
        contrib = -np.imag(v[0].conj() * v[1]) * w
        return float(contrib.sum()), contrib
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
    M = np.real(0.5j * np.einsum("lij,ij->l", eps, T))
    contrib = np.real(0.5j * np.einsum("lij,im,jm,m->lm", eps, v.conj(), v, w))
    return M, contrib


def rammal_wilkinson(bd: BandData, n: int, k_index: int, tol: float = 1e-9):
    """Rammal-Wilkinson coefficient ``M_n`` at grid point ``k_index`` by a sum over bands.

    Returns ``(value, tail)``.  In two dimensions ``value`` is the normal
    component (a scalar); in three it is a vector; in one it vanishes.  The
    tail is the contribution of the upper half of the computed bands, an
    estimate of the truncation error.
    """
    if bd.spin_orbit:
        raise NotImplementedError("Rammal-Wilkinson sums are implemented for scalar fibers")
    if not 0 <= n < bd.n_bands - 1:
        raise GridError(f"band {n} needs at least one computed band above it")
    k = bd.grid.points[k_index]
    q = k + bd.basis.vectors
    value, contrib = _rw_single(bd.energies[k_index], bd.vectors[k_index], q, n, tol)
    half = bd.n_bands // 2
    tail = np.sum(contrib[..., max(half, n + 1):], axis=-1)
    return value, (float(np.max(np.abs(tail))) if np.ndim(tail) else float(abs(tail)))


def rammal_wilkinson_field(bd: BandData, n: int, tol: float = 1e-9):
    """``M_n`` at every grid point, plus the largest truncation tail."""
    vals, tails = [], []
    for i in range(bd.grid.n_points):
        v, t = rammal_wilkinson(bd, n, i, tol)
        vals.append(v)
        tails.append(t)
    return np.asarray(vals), float(max(tails))
