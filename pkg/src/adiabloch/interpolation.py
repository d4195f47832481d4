"""Trigonometric interpolation of periodic grid data over the Brillouin zone."""

from __future__ import annotations

import numpy as np

from .errors import GridError
from .lattice import KGrid


def _axis_modes(n):
    """Frequencies, FFT indices and weights along one axis; the Nyquist mode is split evenly."""
    freqs = np.fft.fftfreq(n, 1.0 / n).astype(int)
    idx = np.arange(n)
    w = np.ones(n)
    if n % 2 == 0:
        nyq = int(np.argmin(freqs))
        freqs = np.append(freqs, n // 2)
        idx = np.append(idx, nyq)
        w[nyq] = 0.5
        w = np.append(w, 0.5)
    return freqs, idx, w


class TrigInterpolant:
    """Periodic interpolant ``f(k) = sum_l c_l exp(2 pi i l . beta(k))`` of grid samples.

    Values may carry trailing component axes, ``(n_k, ...)``.  Gradients and
    Hessians are with respect to Cartesian ``k``.
    """

    def __init__(self, grid: KGrid, values):
        values = np.asarray(values)
        if values.shape[0] != grid.n_points:
            raise GridError(f"{values.shape[0]} samples for a grid of {grid.n_points} points")
        self.grid = grid
        self.real = not np.iscomplexobj(values)
        d = grid.lattice.dim
        tail = values.shape[1:]
        coef = np.fft.fftn(values.reshape(grid.sizes + tail), axes=tuple(range(d))) / grid.n_points
        modes = [_axis_modes(n) for n in grid.sizes]
        mesh_f = np.meshgrid(*[m[0] for m in modes], indexing="ij")
        mesh_i = np.meshgrid(*[m[1] for m in modes], indexing="ij")
        mesh_w = np.meshgrid(*[m[2] for m in modes], indexing="ij")
        self.freqs = np.stack([f.ravel() for f in mesh_f], axis=-1)
        weight = np.prod(np.stack([w.ravel() for w in mesh_w]), axis=0)
        flat = coef[tuple(i.ravel() for i in mesh_i)]
        # grid samples sit at beta = m/N - 1/2
        shift = np.exp(1j * np.pi * self.freqs.sum(axis=1))
        self.coeffs = flat * (weight * shift).reshape((-1,) + (1,) * len(tail))
        self.tail = tail
        # d beta_a / d k_i = gamma_a[i] / (2 pi)
        self._jac = grid.lattice.basis / (2 * np.pi)

    def _phases(self, k):
        beta = self.grid.lattice.dual_coords(k)
        return np.exp(2j * np.pi * (np.atleast_2d(beta) @ self.freqs.T))

    def _finish(self, out, single):
        if self.real:
            out = out.real
        return out[0] if single else out

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        single = k.ndim == 1
        out = np.tensordot(self._phases(k), self.coeffs, axes=(1, 0))
        return self._finish(out, single)

    def gradient(self, k):
        """Shape ``(..., *tail, d)``."""
        k = np.asarray(k, dtype=float)
        single = k.ndim == 1
        ph = self._phases(k)
        # d/d beta_a brings 2 pi i l_a; chain to Cartesian k
        lk = 2j * np.pi * self.freqs @ self._jac  # (n_modes, d)
        out = np.einsum("pm,m...,mi->p...i", ph, self.coeffs, lk)
        return self._finish(out, single)

    def hessian(self, k):
        """Shape ``(..., *tail, d, d)``."""
        k = np.asarray(k, dtype=float)
        single = k.ndim == 1
        ph = self._phases(k)
        lk = 2j * np.pi * self.freqs @ self._jac
        out = np.einsum("pm,m...,mi,mj->p...ij", ph, self.coeffs, lk, lk)
        return self._finish(out, single)
