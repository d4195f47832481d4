"""Effective band dynamics and full wave-packet propagation.

The effective symbol of an isolated band ``n`` in slowly varying fields is

    h0(r, k) = E_n(k - A(r)) + phi(r)
    h1(r, k) = (grad phi(r) - grad E_n(kt) x B(r)) . A_n(kt) - B(r) . M_n(kt)

with ``kt = k - A(r)``, Berry connection ``A_n`` and Rammal-Wilkinson
coefficient ``M_n``.  Trajectories follow the canonical flow of
``h0 + eps*h1`` in the macroscopic time ``s = eps*t``.  The canonical
position ``r`` differs from the packet centre by ``eps*A_n(kt)``.

The full problem ``1/2 (p - A(eps x))^2 + V(x) + phi(eps x)`` is propagated
by Strang splitting on a periodic box of lattice cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GaugeError, GridError, PropagationError
from .fiber import (
    BandData,
    band_structure,
    box_positions,
    cell_coefficients,
    cell_samples,
    make_basis,
    zak_forward,
    zak_inverse,
)
from .fields import ExternalFields, uniform_force
from .geometry import BlochFrame, berry_connection, fix_gauge, frame_from_bands, rammal_wilkinson_field
from .interpolation import TrigInterpolant
from .lattice import KGrid, Lattice, bz_grid, reduce_to_bz
from .potential import FourierPotential, sample_real_space


# --- band symbols ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BandModel:
    """Interpolated band data for one isolated band."""

    band: int
    grid: KGrid
    energy: TrigInterpolant
    connection: TrigInterpolant | None = None
    rammal_wilkinson: TrigInterpolant | None = None

    @property
    def dim(self) -> int:
        return self.grid.lattice.dim


def band_model(bd: BandData, n: int, frame: BlochFrame | None = None,
               with_rammal_wilkinson: bool | None = None) -> BandModel:
    """Interpolants of ``E_n`` and, when a periodic gauge-fixed frame is given, ``A_n`` and ``M_n``."""
    energy = TrigInterpolant(bd.grid, bd.energies[:, n])
    conn = rw = None
    if frame is not None:
        if frame.gauge == "raw" or not frame.periodic:
            raise GaugeError("semiclassical geometry needs a periodic gauge-fixed frame")
        if frame.window != (n, 1):
            raise GaugeError(f"frame holds window {frame.window}, not band {n}")
        conn = TrigInterpolant(bd.grid, berry_connection(frame))
        if with_rammal_wilkinson is None:
            with_rammal_wilkinson = bd.grid.lattice.dim >= 2
        if with_rammal_wilkinson:
            vals, _ = rammal_wilkinson_field(bd, n)
            rw = TrigInterpolant(bd.grid, np.asarray(vals))
    return BandModel(n, bd.grid, energy, conn, rw)


def _embed(v, n=3):
    out = np.zeros(n)
    v = np.atleast_1d(v)
    out[: len(v)] = v
    return out


def h0_eval(model: BandModel, fields: ExternalFields, r, k):
    """``h0`` and its gradients ``(h, dh/dr, dh/dk)``."""
    r = np.asarray(r, dtype=float)
    k = np.asarray(k, dtype=float)
    kt = k - fields.vector_potential(r)
    if not np.all(np.isfinite(kt)):
        raise GridError(f"kinetic quasimomentum is not finite at r={r}")
    E = float(model.energy(kt))
    gE = model.energy.gradient(kt)
    J = fields.vector_potential_jacobian(r)
    h = E + fields.phi.value(r)
    dk = gE
    dr = fields.phi.gradient(r) - J.T @ gE
    return h, dr, dk


def h1_eval(model: BandModel, fields: ExternalFields, r, k):
    """``h1`` and its gradients ``(h1, dh1/dr, dh1/dk)``."""
    if model.connection is None:
        raise GaugeError("h1 needs Berry connection samples (build the model with a frame)")
    d = model.dim
    r = np.asarray(r, dtype=float)
    k = np.asarray(k, dtype=float)
    kt = k - fields.vector_potential(r)
    J = fields.vector_potential_jacobian(r)

    u = _embed(fields.phi.gradient(r))
    du = np.zeros((3, d))
    du[:d] = fields.phi.hessian(r)  # du[a, i] = d_i d_a phi
    b = fields.magnetic_field(r)
    db = fields.magnetic_field_gradient(r)  # db[a, i]
    g = _embed(model.energy.gradient(kt))
    Hg = np.zeros((3, d))
    Hg[:d] = model.energy.hessian(kt)  # Hg[a, m] = d_m d_a E
    A = _embed(model.connection(kt))
    dA = np.zeros((3, d))
    dA[:d] = model.connection.gradient(kt)  # dA[a, m]
    if model.rammal_wilkinson is not None:
        Mv = model.rammal_wilkinson(kt)
        dMv = model.rammal_wilkinson.gradient(kt)
        if d == 2:
            M = np.array([0.0, 0.0, float(Mv)])
            dM = np.zeros((3, d))
            dM[2] = dMv
        else:
            M = _embed(Mv)
            dM = np.zeros((3, d))
            dM[: np.shape(dMv)[0]] = dMv
    else:
        if np.any(b != 0) and d >= 2:
            raise GaugeError("h1 with a magnetic field needs Rammal-Wilkinson samples")
        M = np.zeros(3)
        dM = np.zeros((3, d))

    W = u - np.cross(g, b)
    h1 = float(W @ A - b @ M)
    # derivative with respect to the kinetic momentum kt
    dkt = np.array([
        -np.cross(Hg[:, m], b) @ A + W @ dA[:, m] - b @ dM[:, m] for m in range(d)
    ])
    # explicit r dependence
    dr_explicit = np.array([
        (du[:, i] - np.cross(g, db[:, i])) @ A - db[:, i] @ M for i in range(d)
    ])
    dr = dr_explicit - J.T @ dkt
    return h1, dr, dkt


# --- semiclassical integration -------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    s: np.ndarray
    r: np.ndarray
    k: np.ndarray
    energy: np.ndarray
    order: int
    epsilon: float
    centre: np.ndarray = field(default=None, repr=False)


def _total(model, fields, order, r, k):
    h, dr, dk = h0_eval(model, fields, r, k)
    if order == 1:
        h1, dr1, dk1 = h1_eval(model, fields, r, k)
        eps = fields.epsilon
        h, dr, dk = h + eps * h1, dr + eps * dr1, dk + eps * dk1
    return h, dr, dk


def centre_offset(model: BandModel, fields: ExternalFields, r, k) -> np.ndarray:
    """``eps * A_n(k - A(r))``: packet centre minus canonical position."""
    if model.connection is None:
        return np.zeros(model.dim)
    kt = np.asarray(k) - fields.vector_potential(r)
    return fields.epsilon * np.atleast_1d(model.connection(kt))


def integrate_semiclassics(model: BandModel, fields: ExternalFields, r0, k0,
                           order: int, T: float, dt: float, centre: bool = False) -> Trajectory:
    """RK4 for ``dr/ds = dh/dk``, ``dk/ds = -dh/dr`` with ``h = h0 + eps*h1`` (``order=1``).

    ``k`` is reduced to the Brillouin zone after every step.  With
    ``centre`` the initial ``r0`` is read as a packet centre and converted to
    the canonical position first (order 1 only).
    """
    if order not in (0, 1):
        raise GridError(f"order must be 0 or 1, got {order}")
    if not dt > 0 or not T >= 0:
        raise GridError("need dt > 0 and T >= 0")
    lat = model.grid.lattice
    d = model.dim
    r = np.atleast_1d(np.asarray(r0, dtype=float)).copy()
    k = np.atleast_1d(np.asarray(k0, dtype=float)).copy()
    if centre and order == 1:
        r = r - centre_offset(model, fields, r, k)
    n_steps = int(round(T / dt))
    if n_steps == 0 and T > 0:
        n_steps = 1
    h_step = T / n_steps if n_steps else 0.0

    def rhs(y):
        h, dr, dk = _total(model, fields, order, y[:d], y[d:])
        return np.concatenate([dk, -dr])

    s = np.empty(n_steps + 1)
    rs = np.empty((n_steps + 1, d))
    ks = np.empty((n_steps + 1, d))
    es = np.empty(n_steps + 1)
    y = np.concatenate([r, reduce_to_bz(lat, k)])
    for i in range(n_steps + 1):
        s[i] = i * h_step
        rs[i], ks[i] = y[:d], y[d:]
        es[i] = _total(model, fields, order, y[:d], y[d:])[0]
        if i == n_steps:
            break
        a = rhs(y)
        b = rhs(y + 0.5 * h_step * a)
        c = rhs(y + 0.5 * h_step * b)
        e = rhs(y + h_step * c)
        y = y + h_step / 6.0 * (a + 2 * b + 2 * c + e)
        y[d:] = reduce_to_bz(lat, y[d:])
    cen = rs.copy()
    if order == 1:
        cen = rs + np.array([centre_offset(model, fields, ri, ki) for ri, ki in zip(rs, ks)])
    return Trajectory(s, rs, ks, es, order, fields.epsilon, cen)


# --- wave packets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WavePacket:
    psi: np.ndarray = field(repr=False)
    lattice: Lattice = field(repr=False)
    cells: tuple = ()
    n_y: tuple = ()

    @property
    def volume_element(self) -> float:
        return self.lattice.cell_volume / float(np.prod(self.n_y))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.volume_element))

    def positions(self) -> np.ndarray:
        return box_positions(self.lattice, self.cells, self.n_y)


def gaussian_envelope(grid: KGrid, k0, sigma_k: float, centre_cell=None, images: int = 2) -> np.ndarray:
    """Periodised Gaussian ``f(k)`` with ``|f|^2`` of width ``sigma_k``, centred in real space on a cell.

    The phase ``exp(-i k . R)`` places the packet at lattice vector
    ``R = centre_cell @ basis`` (default: the middle of the box).
    """
    lat = grid.lattice
    if not sigma_k > 0:
        raise GridError("envelope width must be positive")
    if centre_cell is None:
        centre_cell = [n // 2 for n in grid.sizes]
    R = np.asarray(centre_cell, dtype=float) @ lat.basis
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    shifts = np.stack(np.meshgrid(*[np.arange(-images, images + 1)] * lat.dim, indexing="ij"), -1)
    shifts = shifts.reshape(-1, lat.dim) @ lat.dual_basis
    f = np.zeros(grid.n_points, dtype=complex)
    for G in shifts:
        dk = grid.points + G - k0
        f += np.exp(-np.einsum("ij,ij->i", dk, dk) / (4 * sigma_k**2))
    return f * np.exp(-1j * grid.points @ R)


def edge_density(psi, cells, n_y) -> float:
    """Largest probability fraction in the outermost cell layer along any axis."""
    dens = np.abs(psi) ** 2
    total = dens.sum()
    worst = 0.0
    for j, (c, n) in enumerate(zip(cells, n_y)):
        lo = np.take(dens, np.arange(n), axis=j).sum()
        hi = np.take(dens, np.arange((c - 1) * n, c * n), axis=j).sum()
        worst = max(worst, lo / total, hi / total)
    return float(worst)


def band_wavepacket(envelope, band: int, frame: BlochFrame, n_y, edge_tol: float = 1e-8) -> WavePacket:
    """``psi = Zak^{-1}(f(k) phi_n(k, .))`` normalised; the frame column is band ``band``."""
    if frame.basis is None:
        raise GridError("frame carries no plane-wave basis")
    if frame.gauge == "raw":
        raise GaugeError("wave packets need a gauge-fixed frame")
    n0, m = frame.window
    if not n0 <= band < n0 + m:
        raise GridError(f"band {band} is not in the frame window {frame.window}")
    lat = frame.basis.lattice
    grid = bz_grid(lat, frame.sizes)
    n_y = tuple(int(n) for n in np.atleast_1d(n_y))
    f = np.asarray(envelope, dtype=complex).reshape(grid.n_points)
    u = cell_samples(frame.basis, frame.vectors[:, :, band - n0], n_y)
    psi = zak_inverse(f.reshape((-1,) + (1,) * lat.dim) * u, lat, grid)
    packet = WavePacket(psi, lat, tuple(grid.sizes), n_y)
    psi = psi / packet.norm()
    if edge_density(psi, grid.sizes, n_y) > edge_tol:
        raise GridError("envelope too wide for the box: packet reaches the outermost cells")
    return WavePacket(psi, lat, tuple(grid.sizes), n_y)


def band_purity(packet: WavePacket, frame: BlochFrame, band: int | None = None) -> float:
    """``<psi, P psi>`` for the projector on the frame's band (or whole window)."""
    lat = packet.lattice
    grid = bz_grid(lat, packet.cells)
    phi = zak_forward(packet.psi, lat, grid)
    c = cell_coefficients(frame.basis, phi)
    vec = frame.vectors if band is None else frame.vectors[:, :, [band - frame.window[0]]]
    proj = np.einsum("kgm,kg->km", vec.conj(), c)
    # sample sums carry the cell measure |M| / n_y, coefficient sums do not
    total = np.sum(np.abs(phi) ** 2) * packet.volume_element
    return float(np.sum(np.abs(proj) ** 2) / total)


# --- split-step propagation ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Observables:
    s: np.ndarray
    x_mean: np.ndarray
    k_mean: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    epsilon: float


class _Propagator:
    def __init__(self, packet: WavePacket, V: FourierPotential, fields: ExternalFields):
        lat = packet.lattice
        self.lat = lat
        self.packet = packet
        self.fields = fields
        self.eps = fields.epsilon
        shape = packet.psi.shape
        self.shape = shape
        d = lat.dim
        self.x = packet.positions()
        self.dV = packet.volume_element
        pot = sample_real_space(V, self.x).real + fields.phi.values_on(self.eps * self.x)
        self.pot = pot
        # momenta on the box: p = sum_j (nu_j / cells_j) gamma*_j
        nus = [np.fft.fftfreq(n, 1.0 / n) / c for n, c in zip(shape, packet.cells)]
        mesh = np.meshgrid(*nus, indexing="ij")
        frac = np.stack(mesh, axis=-1)
        self.p = frac @ lat.dual_basis
        self.with_A = fields.has_vector_potential
        if self.with_A:
            if not np.allclose(lat.basis, np.diag(np.diag(lat.basis))):
                raise GridError("vector potentials need a lattice with axis-aligned basis vectors")
            for j, comp in enumerate(fields.A):
                if comp.depends_on(j):
                    raise GridError(
                        f"A_{j + 1} depends on r_{j + 1}; use a gauge where each component is "
                        "independent of its own coordinate"
                    )
            self.Avals = [comp.values_on(self.eps * self.x) for comp in fields.A]
            self.p_axis = [self.p[..., j] for j in range(d)]
        else:
            self.kin = 0.5 * np.einsum("...i,...i->...", self.p, self.p)

    def _phases(self, tau):
        if getattr(self, "_tau", None) != tau:
            self._tau = tau
            self._kick = np.exp(-1j * tau * self.pot)
            if not self.with_A:
                self._half = np.exp(-0.5j * tau * self.kin)
                self._full = np.exp(-1j * tau * self.kin)
        return self._kick

    def advance(self, psi, tau, n):
        """``n`` Strang steps; without a vector potential adjacent kinetic half-steps are fused."""
        if self.with_A:
            for _ in range(n):
                psi = self.step(psi, tau)
            return psi
        kick = self._phases(tau)
        f = self._half * np.fft.fftn(psi)
        for i in range(n):
            f = np.fft.fftn(kick * np.fft.ifftn(f))
            f = (self._full if i < n - 1 else self._half) * f
        return np.fft.ifftn(f)

    def kinetic_half(self, psi, tau, reverse=False):
        if not self.with_A:
            self._phases(tau)
            return np.fft.ifftn(self._half * np.fft.fftn(psi))
        axes = range(self.lat.dim)
        for j in (reversed(axes) if reverse else axes):
            # A_j is constant along axis j, so (p_j - A_j)^2 is diagonal after an FFT along j
            pj = np.fft.fftfreq(self.shape[j], 1.0 / self.shape[j]) / self.packet.cells[j]
            pj = pj * self.lat.dual_basis[j, j]
            sh = [1] * self.lat.dim
            sh[j] = -1
            pj = pj.reshape(sh)
            a = self.Avals[j]
            phase = np.exp(-0.25j * tau * (pj - a) ** 2)
            psi = np.fft.ifft(phase * np.fft.fft(psi, axis=j), axis=j)
        return psi

    def step(self, psi, tau):
        psi = self.kinetic_half(psi, tau)
        psi = self._phases(tau) * psi
        return self.kinetic_half(psi, tau, reverse=True)

    def apply_h(self, psi):
        if not self.with_A:
            out = np.fft.ifftn(self.kin * np.fft.fftn(psi))
        else:
            out = np.zeros_like(psi)
            for j in range(self.lat.dim):
                pj = np.fft.fftfreq(self.shape[j], 1.0 / self.shape[j]) / self.packet.cells[j]
                pj = pj * self.lat.dual_basis[j, j]
                sh = [1] * self.lat.dim
                sh[j] = -1
                pj = pj.reshape(sh)
                out += np.fft.ifft(0.5 * (pj - self.Avals[j]) ** 2 * np.fft.fft(psi, axis=j), axis=j)
        return out + self.pot * psi

    def observe(self, psi):
        dens = np.abs(psi) ** 2
        norm2 = dens.sum() * self.dV
        x_mean = (dens.reshape(-1) @ self.x.reshape(-1, self.lat.dim)) * self.dV / norm2
        energy = float(np.real(np.vdot(psi, self.apply_h(psi))) * self.dV / norm2)
        grid = bz_grid(self.lat, self.packet.cells)
        phi = zak_forward(psi, self.lat, grid)
        w = np.sum(np.abs(phi.reshape(grid.n_points, -1)) ** 2, axis=1)
        beta = np.angle(np.exp(2j * np.pi * grid.frac).T @ w) / (2 * np.pi)
        k_mean = reduce_to_bz(self.lat, beta @ self.lat.dual_basis)
        return x_mean, k_mean, float(np.sqrt(norm2)), energy


def split_step_propagate(packet: WavePacket, V: FourierPotential, fields: ExternalFields,
                         T: float, dt: float, record_every: int = 1,
                         norm_tol: float = 1e-9, edge_tol: float = 1e-8) -> Observables:
    """Strang splitting for ``1/2 (p - A(eps x))^2 + V(x) + phi(eps x)``.

    ``T`` and ``dt`` are macroscopic times (``s = eps t``); the microscopic
    step is ``dt/eps``.  Observables are recorded every ``record_every``
    steps.  Raises :class:`PropagationError` when the norm drifts by more
    than ``norm_tol`` or the packet reaches the outermost cells.
    """
    if not dt > 0 or not T >= 0:
        raise GridError("need dt > 0 and T >= 0")
    prop = _Propagator(packet, V, fields)
    tau = dt / fields.epsilon
    n_steps = int(round(T / dt))
    psi = packet.psi.astype(complex)
    n0 = packet.norm()
    rec = []
    stops = sorted(set(range(0, n_steps, record_every)) | {n_steps})
    for i, nxt in zip(stops, stops[1:] + [None]):
        xm, km, nm, en = prop.observe(psi)
        if abs(nm - n0) > norm_tol:
            raise PropagationError(
                f"norm drifted by {abs(nm - n0):.2e} at s={i * dt:.6g}", s=i * dt, drift=abs(nm - n0)
            )
        edge = edge_density(psi, packet.cells, packet.n_y)
        if edge > edge_tol:
            raise PropagationError(
                f"packet reached the box boundary at s={i * dt:.6g} (edge density {edge:.2e})",
                s=i * dt, edge=edge,
            )
        rec.append((i * dt, xm, km, nm, en))
        if nxt is not None:
            psi = prop.advance(psi, tau, nxt - i)
    s, xm, km, nm, en = zip(*rec)
    return Observables(np.array(s), np.array(xm), np.array(km), np.array(nm), np.array(en), fields.epsilon)


# --- comparison harness -------------------------------------------------------------

def compare_centers(full: Observables, sc: Trajectory, lattice: Lattice | None = None):
    """Sup-norm distance of packet centre (macroscopic units) and quasimomentum.

    Momentum differences are folded into the Brillouin zone when ``lattice``
    is given.
    """
    if len(full.s) != len(sc.s) or np.max(np.abs(full.s - sc.s)) > 1e-9 * max(1.0, full.s[-1]):
        raise GridError("full and semiclassical runs are recorded on different time grids")
    centre = sc.centre if sc.centre is not None else sc.r
    dx = full.epsilon * full.x_mean - centre
    dk = full.k_mean - sc.k
    if lattice is not None:
        dk = reduce_to_bz(lattice, dk)
    return {
        "x_error": float(np.max(np.linalg.norm(dx, axis=1))),
        "k_error": float(np.max(np.linalg.norm(dk, axis=1))),
    }


def fit_convergence_order(epsilons, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(eps)``."""
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    if len(eps) < 2 or np.any(err <= 0) or np.any(eps <= 0):
        raise GridError("convergence fit needs at least two positive (eps, error) pairs")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


@dataclass(frozen=True, eq=False)
class SweepResult:
    epsilons: tuple
    errors0: tuple
    errors1: tuple
    fitted_order: float
    observables: tuple = field(default=(), repr=False)
    trajectories: tuple = field(default=(), repr=False)


def bloch_oscillation_sweep(lat: Lattice, V: FourierPotential, epsilons, band: int = 0,
                            force: float = 1.0, horizon: float = 1.0, cells: int = 64,
                            n_y: int = 32, cutoff: float = 10.0, width: float = 0.5,
                            k0: float = 0.0, dt_micro: float = 0.02, record_every: int = 50,
                            sc_dt: float | None = None) -> SweepResult:
    """Split-step against order-0 and order-1 semiclassics in a uniform force (one dimension).

    The packet has ``|f|^2`` width ``sigma_k = width*sqrt(eps)`` so that its
    spread and the semiclassical error share the same order in ``eps``.
    """
    if lat.dim != 1:
        raise GridError("the Bloch-oscillation sweep is one-dimensional")
    grid = bz_grid(lat, cells)
    basis = make_basis(lat, cutoff)
    bd = band_structure(lat, V, grid, basis, band + 2)
    frame = fix_gauge(frame_from_bands(bd, (band, 1)))
    model = band_model(bd, band, frame)
    errs0, errs1, obs, trajs = [], [], [], []
    for eps in epsilons:
        fields = uniform_force([force], eps)
        f = gaussian_envelope(grid, [k0], width * np.sqrt(eps))
        packet = band_wavepacket(f, band, frame, n_y)
        dt = dt_micro * eps
        full = split_step_propagate(packet, V, fields, horizon, dt, record_every)
        r0 = eps * full.x_mean[0]
        kk = full.k_mean[0]
        step = sc_dt or dt * record_every
        idx = np.rint(full.s / step).astype(int)
        if np.max(np.abs(idx * step - full.s)) > 1e-9 * max(1.0, full.s[-1]):
            # records off the coarse grid (horizon not a multiple): fall back to the micro step
            step = dt
            idx = np.rint(full.s / step).astype(int)
        T = idx[-1] * step
        t0 = integrate_semiclassics(model, fields, r0, kk, 0, T, step)
        t1 = integrate_semiclassics(model, fields, r0, kk, 1, T, step, centre=True)
        t0, t1 = _sample(t0, idx), _sample(t1, idx)
        errs0.append(compare_centers(full, t0, lat)["x_error"])
        errs1.append(compare_centers(full, t1, lat)["x_error"])
        obs.append(full)
        trajs.append((t0, t1))
    order = fit_convergence_order(epsilons, errs0)
    return SweepResult(tuple(epsilons), tuple(errs0), tuple(errs1), order, tuple(obs), tuple(trajs))


def _sample(tr: Trajectory, idx) -> Trajectory:
    return Trajectory(tr.s[idx], tr.r[idx], tr.k[idx], tr.energy[idx], tr.order, tr.epsilon, tr.centre[idx])
