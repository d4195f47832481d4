"""Adiabatic charge transport for slowly deformed periodic potentials.

Snapshot projectors ``P(k, t)`` onto the occupied bands give the
gauge-invariant density ``Theta = -i tr(P [dP/dt, grad_k P])`` whose
integral is the polarization change ``dP = -(2 pi)^-d int dt int dk Theta``.
The same quantity is obtained by evolving every occupied fibre state with
``i eps du/dt = H(k, t) u`` and integrating the current.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GapClosedError, GridError, GridTooCoarseError, PropagationError
from .fiber import FiberAssembler, PlaneWaveBasis, make_basis
from .geometry import BlochFrame, berry_curvature, chern_number
from .lattice import KGrid
from .potential import PumpPath, potential_at_time

DEFAULT_ORDER = 12


def fd_weights(offsets, order: int = 1) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0 (Fornberg's recursion)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for m in range(mn, 0, -1):
                    c[i, m] = c1 * (m * c[i - 1, m - 1] - c5 * c[i - 1, m]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for m in range(mn, 0, -1):
                c[j, m] = (c4 * c[j, m] - m * c[j, m - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _central(order):
    h = order // 2
    offs = np.arange(-h, h + 1)
    return offs, fd_weights(offs)


# --- projector field -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProjectorField:
    path: PumpPath
    grid: KGrid
    basis: PlaneWaveBasis
    times: np.ndarray
    periodic_t: bool
    vectors: np.ndarray = field(repr=False)  # (n_t, n_k, N, m)
    energies: np.ndarray = field(repr=False)  # (n_t, n_k, m+1)
    gap: float = 0.0

    @property
    def projectors(self) -> np.ndarray:
        """``P(k, t)``, shape ``(n_t, n_k, N, N)``."""
        return np.einsum("tkim,tkjm->tkij", self.vectors, self.vectors.conj())

    @property
    def n_occupied(self) -> int:
        return self.vectors.shape[-1]

    @property
    def fermi_gap(self) -> np.ndarray:
        """Gap between the top occupied and lowest empty band at every node, ``(n_t, n_k)``."""
        return self.energies[..., -1] - self.energies[..., -2]


def snapshot_projectors(path: PumpPath, grid: KGrid, cutoff: float | None = None,
                        n_times: int | None = None, basis: PlaneWaveBasis | None = None,
                        gap_tol: float = 1e-8) -> ProjectorField:
    """Occupied-band projectors at the ``(k, t)`` nodes.

    Cyclic paths use ``n_times`` nodes ``t_j = j T / n_times``; open paths
    use ``n_times + 1`` nodes including both ends.  Default ``n_times`` is
    the number of snapshot intervals.
    """
    if grid.lattice is not path.lattice and not np.allclose(grid.lattice.basis, path.lattice.basis):
        raise GridError("k-grid and pump path use different lattices")
    if basis is None:
        if cutoff is None:
            raise GridError("give a plane-wave cutoff or basis")
        basis = make_basis(path.lattice, cutoff)
    m = path.n_occupied
    n_times = n_times or len(path.times) - 1
    t0, T = path.times[0], path.period
    if path.cyclic:
        times = t0 + T * np.arange(n_times) / n_times
    else:
        times = t0 + T * np.arange(n_times + 1) / n_times
    if basis.size < m + 1:
        raise GridError("plane-wave basis smaller than the occupied set plus one band")
    vecs = np.empty((len(times), grid.n_points, basis.size, m), dtype=complex)
    ens = np.empty((len(times), grid.n_points, m + 1))
    for i, t in enumerate(times):
        asm = FiberAssembler(potential_at_time(path, t), basis)
        mats = np.array([asm.matrix(k) for k in grid.points])
        E, U = np.linalg.eigh(mats)
        ens[i] = E[:, : m + 1]
        vecs[i] = U[:, :, :m]
    gaps = ens[..., m] - ens[..., m - 1]
    g = float(gaps.min())
    if g <= gap_tol:
        it, ik = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
        raise GapClosedError(
            f"Fermi gap closes at t={times[it]:.6g}, k={grid.points[ik].tolist()} (gap {g:.3e})",
            t=float(times[it]), k=grid.points[ik], t_index=int(it), k_index=int(ik), gap=g,
        )
    return ProjectorField(path, grid, basis, times, path.cyclic, vecs, ens, g)


def _relabel(P, shift_map):
    """``P'[a, b] = P[s[a], s[b]]`` with missing entries zero."""
    ok = shift_map >= 0
    out = np.zeros_like(P)
    idx = np.where(ok)[0]
    out[..., idx[:, None], idx[None, :]] = P[..., shift_map[idx][:, None], shift_map[idx][None, :]]
    return out


def _k_derivative(P, pf: ProjectorField, axis: int, order: int):
    """``dP/d beta_axis`` (reduced coordinate) with equivariant wrap-around."""
    sizes = pf.grid.sizes
    n = sizes[axis]
    offs, w = _central(order)
    if n <= offs.max():
        raise GridTooCoarseError(f"k-grid axis {axis} has {n} points; order {order} needs more")
    Pg = P.reshape((P.shape[0],) + tuple(sizes) + P.shape[-2:])
    ax = 1 + axis
    unit = np.eye(len(sizes), dtype=int)[axis]
    out = np.zeros_like(Pg)
    idx = np.arange(n)
    for o, c in zip(offs, w):
        if c == 0:
            continue
        rolled = np.roll(Pg, -o, axis=ax)
        wraps = np.floor_divide(idx + o, n)
        for wv in np.unique(wraps):
            if wv == 0:
                continue
            sel = [slice(None)] * Pg.ndim
            sel[ax] = np.where(wraps == wv)[0]
            sel = tuple(sel)
            rolled[sel] = _relabel(rolled[sel], pf.basis.shift_map(wv * unit))
        out += c * rolled
    return (out * n).reshape(P.shape)


def _t_derivative(P, pf: ProjectorField, order: int):
    nt = P.shape[0]
    if nt < 2:
        raise GridTooCoarseError(f"{nt} time node is too few for a time derivative")
    dt = pf.times[1] - pf.times[0]
    h = order // 2
    if pf.periodic_t:
        offs, w = _central(order)
        if nt <= offs.max():
            raise GridTooCoarseError(f"{nt} time nodes are too few for order {order}")
        out = sum(c * np.roll(P, -o, axis=0) for o, c in zip(offs, w) if c != 0)
        return out / dt
    if nt < order + 1:
        raise GridTooCoarseError(f"{nt} time nodes are too few for order {order}")
    out = np.empty_like(P)
    for i in range(nt):
        lo = min(max(i - h, 0), nt - order - 1)
        offs = np.arange(lo, lo + order + 1) - i
        w = fd_weights(offs)
        out[i] = np.tensordot(w, P[i + offs], axes=(0, 0))
    return out / dt


def _check_neighbours(P, pf: ProjectorField):
    d = pf.grid.lattice.dim
    Pg = P.reshape((P.shape[0],) + tuple(pf.grid.sizes) + P.shape[-2:])
    worst = 0.0
    for ax in range(d):
        diff = Pg - np.roll(Pg, -1, axis=1 + ax)
        # the wrapped neighbour differs by relabelling only; skip the seam
        sel = [slice(None)] * Pg.ndim
        sel[1 + ax] = slice(0, pf.grid.sizes[ax] - 1)
        worst = max(worst, float(np.linalg.norm(diff[tuple(sel)], 2, axis=(-2, -1)).max(initial=0)))
    tdiff = P[1:] - P[:-1]
    if len(tdiff):
        worst = max(worst, float(np.linalg.norm(tdiff, 2, axis=(-2, -1)).max()))
    if worst >= 1.0:
        raise GridTooCoarseError(
            f"neighbouring projectors differ by {worst:.3f} in operator norm; refine the (k, t) grid",
            distance=worst,
        )
    return worst


@dataclass(frozen=True, eq=False)
class ThetaField:
    theta: np.ndarray = field(repr=False)  # (n_t, n_k, d)
    times: np.ndarray = field(repr=False)
    grid: KGrid = field(repr=False)
    periodic_t: bool = True
    period: float = 1.0

    def current(self) -> np.ndarray:
        """Adiabatic current ``-(2 pi)^-d int dk Theta`` at every node time, ``(n_t, d)``."""
        d = self.grid.lattice.dim
        return -self.theta.sum(axis=1) * self.grid.weight / (2 * np.pi) ** d


def theta_field(pf: ProjectorField, order: int = DEFAULT_ORDER) -> ThetaField:
    """``Theta(k, t) = -i tr(P [dP/dt, grad_k P])`` by centred differences of the given order."""
    P = pf.projectors
    _check_neighbours(P, pf)
    lat = pf.grid.lattice
    d = lat.dim
    Pt = _t_derivative(P, pf, order)
    theta_beta = np.empty(P.shape[:2] + (d,))
    for j in range(d):
        Pk = _k_derivative(P, pf, j, order)
        comm = Pt @ Pk - Pk @ Pt
        theta_beta[..., j] = np.real(-1j * np.einsum("tkij,tkji->tk", P, comm))
    # d beta_j / d k_i = gamma_j[i] / (2 pi)
    theta = theta_beta @ (lat.basis / (2 * np.pi))
    return ThetaField(theta, pf.times, pf.grid, pf.periodic_t, pf.path.period)


@dataclass(frozen=True)
class Polarization:
    raw: np.ndarray
    quanta: np.ndarray


def polarization_quanta(lat, dP) -> np.ndarray:
    """Components ``dP . gamma*_j |M| / (2 pi)``; integers for quantized pumps."""
    return lat.dual_basis @ np.asarray(dP) * lat.cell_volume / (2 * np.pi)


def ksv_polarization(tf: ThetaField) -> Polarization:
    """``dP = -(2 pi)^-d int_0^T dt int dk Theta`` (rectangle rule for cyclic paths, trapezoid otherwise)."""
    J = tf.current()
    if tf.periodic_t:
        dP = J.sum(axis=0) * tf.period / len(tf.times)
    else:
        dP = np.trapezoid(J, tf.times, axis=0)
    return Polarization(dP, polarization_quanta(tf.grid.lattice, dP))


def pump_frame(pf: ProjectorField) -> BlochFrame:
    """Occupied frame on the ``(k, t)`` torus of a cyclic one-dimensional pump."""
    if not pf.periodic_t:
        raise GridError("pump Chern numbers need a cyclic path")
    if pf.grid.lattice.dim != 1:
        raise GridError("pump Chern numbers are defined here for one-dimensional lattices")
    nt, nk = pf.vectors.shape[:2]
    vec = pf.vectors.transpose(1, 0, 2, 3).reshape(nk * nt, pf.basis.size, pf.n_occupied)
    steps = np.diag([pf.grid.steps[0, 0], pf.path.period / nt])
    kk, tt = np.meshgrid(pf.grid.points[:, 0], pf.times, indexing="ij")
    return BlochFrame(
        sizes=(nk, nt),
        points=np.stack([kk.ravel(), tt.ravel()], axis=-1),
        steps=steps,
        vectors=vec,
        wraps=(pf.basis.shift_map([1]), None),
        gauge="raw",
        window=(0, pf.n_occupied),
        gap=pf.gap,
        basis=pf.basis,
    )


def pump_chern(pf: ProjectorField) -> int:
    """Chern number of the occupied bundle over the ``(k, t)`` torus.

    The torus is oriented as ``(k, t)``; with the plaquette convention this
    gives the transported charge per cycle with the sign of ``dP``.
    """
    return chern_number(berry_curvature(pump_frame(pf)))


# --- frame-based Theta -----------------------------------------------------------

def _fd_along(a, axis, spacing, order, periodic, wrap=None):
    """Centred derivative along ``axis``; ``wrap(block, w)`` maps values shifted by ``w`` periods."""
    n = a.shape[axis]
    offs, w = _central(order)
    out = np.zeros_like(a)
    idx = np.arange(n)
    for o, c in zip(offs, w):
        if c == 0:
            continue
        rolled = np.roll(a, -o, axis=axis)
        if periodic and wrap is not None:
            wraps = np.floor_divide(idx + o, n)
            for wv in np.unique(wraps):
                if wv == 0:
                    continue
                sel = [slice(None)] * a.ndim
                sel[axis] = np.where(wraps == wv)[0]
                rolled[tuple(sel)] = wrap(rolled[tuple(sel)], wv)
        out += c * rolled
    return out / spacing


def theta_from_frame(pf: ProjectorField, order: int = DEFAULT_ORDER):
    """``Theta_n = -dA_n/dt - dphi_n/dk`` from a smooth single-band frame (one dimension).

    The frame is parallel transported in ``t`` at the first k-point, then in
    ``k`` at every time with the loop phase spread uniformly and unwrapped
    in ``t``.  Here ``A_n = i <u, du/dk>`` and ``phi_n = -i <u, du/dt>``.
    Returns ``(theta, valid)`` where ``valid`` marks time nodes whose stencil
    does not cross the end of the time grid.
    """
    if pf.grid.lattice.dim != 1 or pf.n_occupied != 1:
        raise GridError("the frame formula is implemented for one occupied band in one dimension")
    u = pf.vectors[..., 0].copy()  # (n_t, n_k, N)
    nt, nk, _ = u.shape
    smap = {1: pf.basis.shift_map([1]), -1: pf.basis.shift_map([-1])}

    def shift(v, w):
        s = pf.basis.shift_map([int(w)]) if abs(w) > 1 else smap[int(w)]
        out = np.zeros_like(v)
        ok = s >= 0
        out[..., ok] = v[..., s[ok]]
        return out

    # transport in t at the base point
    for i in range(1, nt):
        ov = np.vdot(u[i - 1, 0], u[i, 0])
        u[i] *= np.conj(ov) / abs(ov)
    # transport in k at every t, spread the loop phase, unwrap it in t
    thetas = np.empty(nt)
    for i in range(nt):
        for j in range(1, nk):
            ov = np.vdot(u[i, j - 1], u[i, j])
            u[i, j] *= np.conj(ov) / abs(ov)
        thetas[i] = np.angle(np.vdot(u[i, -1], shift(u[i, 0], 1)))
    thetas = np.unwrap(thetas)
    u = u * np.exp(1j * np.outer(thetas, np.arange(nk)) / nk)[:, :, None]

    dk = pf.grid.steps[0, 0]
    dt = pf.times[1] - pf.times[0]
    du_k = _fd_along(u, 1, dk, order, True, shift)
    du_t = _fd_along(u, 0, dt, order, False)
    A = np.real(1j * np.einsum("tkg,tkg->tk", u.conj(), du_k))
    phi = np.real(-1j * np.einsum("tkg,tkg->tk", u.conj(), du_t))
    theta = -_fd_along(A, 0, dt, order, False) - _fd_along(phi, 1, dk, order, True)
    h = order // 2
    valid = np.zeros(nt, dtype=bool)
    # two nested stencils in t (u -> phi is along k, u -> A then d/dt): A needs h, its derivative another h
    valid[2 * h : nt - 2 * h] = True
    return theta, valid


# --- full fibre evolution ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PumpEvolution:
    times: np.ndarray
    current: np.ndarray  # (n_steps+1, d)
    dP: np.ndarray
    quanta: np.ndarray
    norm_drift: float
    epsilon: float


def _magnus_generator(H1, H2, h, eps):
    """Fourth-order Magnus exponent ``K`` with ``U = exp(-i K)`` for ``i eps u' = H u``."""
    comm = H2 @ H1 - H1 @ H2
    # Omega = (h/2)(A1 + A2) + (sqrt3 h^2/12)[A2, A1], A = -i H / eps
    return (h / (2 * eps)) * (H1 + H2) - 1j * (np.sqrt(3) * h**2 / (12 * eps**2)) * comm


def _expm_herm(K):
    w, U = np.linalg.eigh(K)
    return (U * np.exp(-1j * w)[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)


def propagated_polarization(path: PumpPath, epsilon: float, grid: KGrid, cutoff: float | None = None,
                            dt: float | None = None, basis: PlaneWaveBasis | None = None,
                            norm_tol: float = 1e-9) -> PumpEvolution:
    """Evolve the occupied fibre states and integrate the current over one period.

    ``J(t) = (eps N |M|)^-1 sum_k sum_occ Re <u, (k + G) u>`` and
    ``dP = int_0^T J dt`` (composite Simpson on the step grid).  The default
    step is ``eps/40`` rounded to an even number of steps.
    """
    if not epsilon > 0:
        raise GridError("epsilon must be positive")
    lat = path.lattice
    if basis is None:
        if cutoff is None:
            raise GridError("give a plane-wave cutoff or basis")
        basis = make_basis(lat, cutoff)
    m = path.n_occupied
    T = path.period
    t0 = path.times[0]
    n_steps = int(np.ceil(T / (dt or epsilon / 40.0)))
    n_steps += n_steps % 2
    h = T / n_steps
    kin = np.array([0.5 * np.einsum("ij,ij->i", k + basis.vectors, k + basis.vectors) for k in grid.points])
    vel = grid.points[:, None, :] + basis.vectors[None, :, :]  # (n_k, N, d)

    def hamiltonians(t):
        vmat = FiberAssembler(potential_at_time(path, t), basis).vmat
        Hs = np.broadcast_to(vmat, (grid.n_points,) + vmat.shape).copy()
        idx = np.arange(basis.size)
        Hs[:, idx, idx] += kin
        return 0.5 * (Hs + np.swapaxes(Hs.conj(), -1, -2))

    _, U0 = np.linalg.eigh(hamiltonians(t0))
    u = U0[:, :, :m].copy()
    scale = 1.0 / (epsilon * grid.n_points * lat.cell_volume)

    def current(u):
        return scale * np.einsum("kgm,kgd,kgm->d", u.conj(), vel, u).real

    J = np.empty((n_steps + 1, lat.dim))
    J[0] = current(u)
    c1, c2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6
    for i in range(n_steps):
        ta = t0 + i * h
        H1 = hamiltonians(min(ta + c1 * h, t0 + T))
        H2 = hamiltonians(min(ta + c2 * h, t0 + T))
        u = _expm_herm(_magnus_generator(H1, H2, h, epsilon)) @ u
        J[i + 1] = current(u)
    drift = float(np.abs(np.einsum("kgm,kgm->km", u.conj(), u).real - 1.0).max())
    if drift > norm_tol:
        raise PropagationError(f"fibre norm drifted by {drift:.2e}", drift=drift)
    w = np.ones(n_steps + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    dP = (h / 3.0) * (w @ J)
    times = t0 + h * np.arange(n_steps + 1)
    return PumpEvolution(times, J, dP, polarization_quanta(lat, dP), drift, float(epsilon))
