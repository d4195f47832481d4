"""Lattice-periodic potentials given by finitely many Fourier coefficients.

A potential is ``V(x) = sum_n Vhat(n) exp(i G_n . x)`` with
``G_n = sum_j n_j gamma*_j``.  Pump paths are sequences of such potentials
on a common lattice, interpolated linearly in the coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, RealnessError
from .lattice import Lattice

REAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FourierPotential:
    lattice: Lattice
    coeffs: dict
    real: bool = True

    def __getitem__(self, n) -> complex:
        return self.coeffs.get(tuple(n), 0.0j)

    @property
    def support(self):
        return sorted(self.coeffs)

    def max_index(self) -> int:
        if not self.coeffs:
            return 0
        return int(max(max(abs(c) for c in n) for n in self.coeffs))

    def scaled(self, factor: float) -> "FourierPotential":
        return FourierPotential(
            self.lattice, {n: factor * v for n, v in self.coeffs.items()}, self.real
        )

    def is_inversion_symmetric(self, tol: float = REAL_TOL) -> bool:
        return all(abs(v - self[tuple(-c for c in n)]) <= tol for n, v in self.coeffs.items())


def _normalize_entries(lat: Lattice, entries):
    items = entries.items() if isinstance(entries, dict) else entries
    out = {}
    for key, value in items:
        n = tuple(int(c) for c in np.atleast_1d(key))
        if len(n) != lat.dim or any(float(c) != float(k) for c, k in zip(n, np.atleast_1d(key))):
            raise GridError(f"coefficient index {key!r} is not {lat.dim} integers")
        v = complex(value)
        if v != 0:
            out[n] = out.get(n, 0.0j) + v
    return out


def potential_from_coeffs(lat: Lattice, entries, real: bool = True) -> FourierPotential:
    """Store Fourier coefficients keyed by integer dual coordinates.

    ``entries`` is a mapping (or iterable of pairs) from integer tuples to
    complex amplitudes.  When ``real`` is set the conjugacy condition
    ``Vhat(-n) == conj(Vhat(n))`` is enforced.
    """
    coeffs = _normalize_entries(lat, entries)
    if real:
        for n, v in sorted(coeffs.items()):
            partner = coeffs.get(tuple(-c for c in n), 0.0j)
            if abs(partner - np.conj(v)) > REAL_TOL * max(1.0, abs(v)):
                raise RealnessError(
                    f"declared-real potential violates conjugacy at G={list(n)}: "
                    f"Vhat(G)={v}, Vhat(-G)={partner}",
                    G=list(n),
                )
    return FourierPotential(lat, coeffs, real)


def sample_real_space(V: FourierPotential, x) -> np.ndarray:
    """Evaluate ``V`` at Cartesian points ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != V.lattice.dim:
        x = x[..., None]
    out = np.zeros(x.shape[:-1], dtype=complex)
    for n, v in V.coeffs.items():
        G = V.lattice.dual_vector(n)
        out += v * np.exp(1j * (x @ G))
    return out


@dataclass(frozen=True, eq=False)
class PumpPath:
    times: np.ndarray
    snapshots: tuple
    n_occupied: int
    cyclic: bool = False
    _keys: tuple = field(default=(), repr=False)
    interpolation: str = "linear"
    _fourier: tuple | None = field(default=None, repr=False)

    @property
    def lattice(self) -> Lattice:
        return self.snapshots[0].lattice

    @property
    def period(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def keys(self):
        return self._keys

    def coefficient_table(self) -> np.ndarray:
        """Array ``(n_snapshots, n_keys)`` of coefficients on the union support."""
        return np.array([[s[n] for n in self._keys] for s in self.snapshots])


def make_pump_path(times, snapshots, n_occupied: int, cyclic: bool = False,
                   interpolation: str = "linear") -> PumpPath:
    """Time-tagged snapshots on one lattice.

    ``interpolation`` is ``"linear"`` (piecewise linear in the coefficients)
    or ``"trigonometric"``, which is available for cyclic paths on uniform
    time grids and interpolates each coefficient by its periodic Fourier
    series.  The latter is smooth in time, so drives do not acquire kinks
    at the snapshot times.
    """
    times = np.asarray(times, dtype=float)
    snapshots = tuple(snapshots)
    if times.ndim != 1 or len(times) != len(snapshots) or len(times) < 2:
        raise GridError("pump path needs at least two time-tagged snapshots")
    if np.any(np.diff(times) <= 0):
        raise GridError("pump snapshot times must be strictly increasing")
    if n_occupied < 1:
        raise GridError("number of occupied bands must be positive")
    lat = snapshots[0].lattice
    if any(s.lattice is not lat for s in snapshots):
        raise GridError("all pump snapshots must share one lattice object")
    if interpolation not in ("linear", "trigonometric"):
        raise GridError(f"unknown interpolation rule {interpolation!r}")
    keys = tuple(sorted(set().union(*(s.coeffs for s in snapshots))))
    path = PumpPath(times, snapshots, int(n_occupied), bool(cyclic), keys)
    if cyclic:
        table = path.coefficient_table()
        if not np.allclose(table[0], table[-1], rtol=0.0, atol=REAL_TOL):
            raise GridError("cyclic pump path: last snapshot differs from the first")
    if interpolation == "trigonometric":
        if not cyclic:
            raise GridError("trigonometric interpolation needs a cyclic path")
        steps = np.diff(times)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
            raise GridError("trigonometric interpolation needs uniformly spaced snapshots")
        path = PumpPath(times, snapshots, int(n_occupied), True, keys, interpolation,
                        _fourier_series(path.coefficient_table()[:-1]))
    return path


def _fourier_series(table):
    """Frequencies and amplitudes of the periodic interpolant of ``table`` rows (Nyquist split)."""
    n = table.shape[0]
    amps = np.fft.fft(table, axis=0) / n
    freqs = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        nyq = n // 2
        amps[nyq] *= 0.5
        amps = np.vstack([amps, amps[nyq]])
        freqs = np.append(freqs, nyq)
    return freqs, amps


def potential_at_time(path: PumpPath, t: float) -> FourierPotential:
    t0, t1 = path.times[0], path.times[-1]
    if not (t0 - 1e-12 <= t <= t1 + 1e-12):
        raise GridError(f"time {t} outside pump interval [{t0}, {t1}]")
    t = min(max(t, t0), t1)
    if path.interpolation == "trigonometric":
        freqs, amps = path._fourier
        vals = np.exp(2j * np.pi * freqs * (t - t0) / (t1 - t0)) @ amps
        real = all(s.real for s in path.snapshots)
        coeffs = {n: complex(v) for n, v in zip(path.keys, vals) if v != 0}
        return FourierPotential(path.lattice, coeffs, real)
    j = int(np.searchsorted(path.times, t, side="right")) - 1
    j = min(j, len(path.times) - 2)
    ta, tb = path.times[j], path.times[j + 1]
    w = (t - ta) / (tb - ta)
    a, b = path.snapshots[j], path.snapshots[j + 1]
    if w == 0.0:
        return a
    if w == 1.0:
        return b
    coeffs = {n: (1.0 - w) * a[n] + w * b[n] for n in path.keys}
    coeffs = {n: v for n, v in coeffs.items() if v != 0}
    return FourierPotential(path.lattice, coeffs, a.real and b.real)


def reversed_path(path: PumpPath) -> PumpPath:
    """The same path traversed backwards, ``t -> T - t``."""
    times = path.times[-1] + path.times[0] - path.times[::-1]
    return make_pump_path(times, path.snapshots[::-1], path.n_occupied, path.cyclic, path.interpolation)


def sliding_cosine_pump(
    lat: Lattice,
    amplitude: float = 1.0,
    period: float = 1.0,
    n_snapshots: int = 256,
    n_occupied: int = 1,
    direction: int = 0,
    ramp: bool = False,
    interpolation: str = "linear",
) -> PumpPath:
    """``V(x, t) = 2*amplitude*cos(gamma*_dir . x - 2*pi*tau(t)/period)``, one full cycle.

    Without ``ramp`` the potential slides at constant speed, ``tau(t) = t``.
    With ``ramp`` it starts and stops smoothly,
    ``tau(t) = t - period/(2 pi) sin(2 pi t/period)``, so that the drive and
    its first time derivative vanish at both ends.  Both trace the same loop.
    """
    times = np.linspace(0.0, period, n_snapshots + 1)
    n = tuple(1 if j == direction else 0 for j in range(lat.dim))
    minus = tuple(-c for c in n)
    snaps = []
    for j, t in enumerate(times):
        frac = (j % n_snapshots) / n_snapshots
        if ramp:
            frac = frac - np.sin(2 * np.pi * frac) / (2 * np.pi)
        phase = np.exp(-2j * np.pi * frac)
        snaps.append(potential_from_coeffs(lat, {n: amplitude * phase, minus: amplitude * np.conj(phase)}))
    return make_pump_path(times, snaps, n_occupied, cyclic=True, interpolation=interpolation)


def static_path(V: FourierPotential, period: float = 1.0, n_occupied: int = 1, n_snapshots: int = 2) -> PumpPath:
    times = np.linspace(0.0, period, n_snapshots)
    return make_pump_path(times, [V] * n_snapshots, n_occupied, cyclic=True)
