"""Harper-like operators at rational flux.

A biperiodic symbol ``h(K1, K2) = sum_n hhat(n) exp(i(n1 K1 + n2 K2))`` is
quantized with ``[K1, K2] = 2 pi i alpha``.  For ``alpha = p/q`` the
operator fibres over the magnetic zone ``kappa1 in [0, 2pi/q)``,
``kappa2 in [0, 2pi)`` into ``q x q`` matrices: ``exp(iK2)`` becomes
``diag(exp(i(kappa2 + 2 pi alpha m)))`` and ``exp(iK1)`` the cyclic shift
``e_m -> e_{m+1}`` whose wrap-around link carries ``exp(i q kappa1)``.
Mixed monomials use Weyl ordering,
``exp(i(n1 K1 + n2 K2)) = exp(i pi alpha n1 n2) S^n1 D^n2``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np

from .errors import GapClosedError, GridError, RealnessError
from .geometry import BlochFrame, berry_curvature, chern_number
from .potential import FourierPotential

MERGE_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Flux:
    p: int
    q: int

    def __post_init__(self):
        if self.q < 1 or gcd(self.p, self.q) != 1:
            raise GridError(f"flux {self.p}/{self.q} is not a reduced fraction with q >= 1")
        if self.q > 1 and not 0 <= self.p < self.q:
            raise GridError(f"flux numerator must satisfy 0 <= p < q, got {self.p}/{self.q}")
        if self.q == 1 and self.p != 0:
            raise GridError("integer flux is represented as 0/1")

    @property
    def alpha(self) -> float:
        return self.p / self.q

    @classmethod
    def from_fraction(cls, value) -> "Flux":
        fr = Fraction(value) % 1
        return cls(fr.numerator, fr.denominator)

    def __str__(self):
        return f"{self.p}/{self.q}"


def farey_fluxes(q_max: int) -> list:
    """All reduced fluxes ``p/q`` in ``[0, 1)`` with ``q <= q_max``, ascending."""
    if q_max < 1:
        raise GridError(f"q_max must be at least 1, got {q_max}")
    out = {Flux(0, 1)}
    for q in range(2, q_max + 1):
        out.update(Flux(p, q) for p in range(1, q) if gcd(p, q) == 1)
    return sorted(out, key=lambda f: (Fraction(f.p, f.q), f.q))


def validate_symbol(symbol, tol: float = 1e-12) -> dict:
    coeffs = {}
    for n, v in dict(symbol).items():
        n = tuple(int(c) for c in n)
        if len(n) != 2:
            raise GridError(f"symbol index {n} must have two components")
        if v != 0:
            coeffs[n] = coeffs.get(n, 0j) + complex(v)
    for n, v in coeffs.items():
        partner = coeffs.get((-n[0], -n[1]), 0j)
        if abs(partner - np.conj(v)) > tol * max(1.0, abs(v)):
            raise RealnessError(f"symbol is not real: hhat{list(n)}={v}, hhat(-n)={partner}", G=list(n))
    return coeffs


def cosine_symbol(t1: float = 1.0, t2: float = 1.0) -> dict:
    """``2 t1 cos K1 + 2 t2 cos K2``."""
    return {(1, 0): t1, (-1, 0): t1, (0, 1): t2, (0, -1): t2}


@dataclass(frozen=True, eq=False)
class HarperModel:
    flux: Flux
    symbol: dict = field(repr=False)

    @property
    def q(self) -> int:
        return self.flux.q


def make_harper(symbol, flux) -> HarperModel:
    if not isinstance(flux, Flux):
        flux = Flux.from_fraction(flux)
    return HarperModel(flux, validate_symbol(symbol))


def magnetic_zone_grid(flux: Flux, sizes) -> np.ndarray:
    """Grid ``kappa = (2 pi i / (q N1), 2 pi j / N2)``, flattened in C order."""
    n1, n2 = (int(s) for s in sizes)
    if n1 < 1 or n2 < 1:
        raise GridError(f"magnetic zone grid sizes must be positive, got {sizes}")
    k1 = 2 * np.pi * np.arange(n1) / (flux.q * n1)
    k2 = 2 * np.pi * np.arange(n2) / n2
    mesh = np.meshgrid(k1, k2, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _shift_power(q, n1, links):
    """``S^n1`` for the cyclic shift with link phases ``links[m]`` on ``e_m -> e_{m+1}``."""
    S = np.zeros((q, q), dtype=complex)
    S[(np.arange(q) + 1) % q, np.arange(q)] = links
    if n1 >= 0:
        return np.linalg.matrix_power(S, n1)
    return np.linalg.matrix_power(S.conj().T, -n1)


def harper_matrix(model: HarperModel, kappa, boundary_link: int | None = None) -> np.ndarray:
    """``q x q`` fibre of the quantized symbol at ``kappa = (kappa1, kappa2)``.

    ``boundary_link`` selects which link ``e_j -> e_{j+1}`` of the cyclic
    shift carries the phase ``exp(i q kappa1)`` (default ``q - 1``, the
    wrap-around).  All choices are unitarily equivalent.
    """
    q, alpha = model.q, model.flux.alpha
    k1, k2 = float(kappa[0]), float(kappa[1])
    links = np.ones(q, dtype=complex)
    links[q - 1 if boundary_link is None else int(boundary_link) % q] = np.exp(1j * q * k1)
    diag = np.exp(1j * (k2 + 2 * np.pi * alpha * np.arange(q)))
    H = np.zeros((q, q), dtype=complex)
    cache = {}
    for (n1, n2), v in model.symbol.items():
        if n1 not in cache:
            cache[n1] = _shift_power(q, n1, links)
        H += v * np.exp(1j * np.pi * alpha * n1 * n2) * cache[n1] * (diag**n2)[None, :]
    return 0.5 * (H + H.conj().T)


def harper_bands(model: HarperModel, sizes, vectors: bool = False):
    """Eigenvalues (and optionally eigenvectors) over the magnetic zone grid."""
    kap = magnetic_zone_grid(model.flux, sizes)
    mats = np.array([harper_matrix(model, k) for k in kap])
    if vectors:
        return np.linalg.eigh(mats)
    return np.linalg.eigvalsh(mats)


def merge_intervals(intervals, tol: float = MERGE_TOL) -> list:
    """Union of closed intervals; intervals that merely touch stay separate."""
    out = []
    for lo, hi in sorted(intervals):
        if out and lo < out[-1][1] - tol:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


@dataclass(frozen=True)
class FluxSpectrum:
    flux: Flux
    band_edges: tuple
    intervals: tuple


def flux_spectrum(symbol, flux: Flux, sizes, tol: float = MERGE_TOL) -> FluxSpectrum:
    E = harper_bands(make_harper(symbol, flux), sizes)
    edges = tuple((float(lo), float(hi)) for lo, hi in zip(E.min(axis=0), E.max(axis=0)))
    return FluxSpectrum(flux, edges, tuple(merge_intervals(edges, tol)))


def butterfly_scan(symbol, q_max: int, sizes=(64, 64), tol: float = MERGE_TOL, workers: int = 1) -> dict:
    """Spectrum intervals for every Farey flux with ``q <= q_max``."""
    fluxes = farey_fluxes(q_max)
    symbol = validate_symbol(symbol)

    def one(f):
        return flux_spectrum(symbol, f, sizes, tol)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            spectra = list(pool.map(one, fluxes))
    else:
        spectra = [one(f) for f in fluxes]
    return {s.flux: s for s in spectra}


def harper_frame(model: HarperModel, band: int, sizes=(64, 64), gap_tol: float = 1e-9) -> BlochFrame:
    """Frame of one magnetic band over the magnetic zone torus (gap certified)."""
    q = model.q
    if not 0 <= band < q:
        raise GridError(f"band {band} outside 0..{q - 1}")
    E, U = harper_bands(model, sizes, vectors=True)
    gaps = []
    if band > 0:
        gaps.append((E[:, band] - E[:, band - 1]).min())
    if band < q - 1:
        gaps.append((E[:, band + 1] - E[:, band]).min())
    g = float(min(gaps)) if gaps else np.inf
    if g <= gap_tol:
        i = int(np.argmin(np.minimum(
            E[:, band] - E[:, band - 1] if band > 0 else np.inf,
            E[:, band + 1] - E[:, band] if band < q - 1 else np.inf,
        )))
        raise GapClosedError(
            f"magnetic band {band} at flux {model.flux} touches a neighbour (gap {g:.3e})",
            band=band, flux=str(model.flux), gap=g,
            kappa=magnetic_zone_grid(model.flux, sizes)[i],
        )
    n1, n2 = (int(s) for s in sizes)
    steps = np.diag([2 * np.pi / (q * n1), 2 * np.pi / n2])
    return BlochFrame(
        sizes=(n1, n2),
        points=magnetic_zone_grid(model.flux, sizes),
        steps=steps,
        vectors=U[:, :, band : band + 1],
        wraps=(None, None),
        gauge="raw",
        window=(band, 1),
        gap=g,
    )


def magnetic_band_chern(symbol, flux, band: int, sizes=(64, 64)) -> int:
    frame = harper_frame(make_harper(symbol, flux), band, sizes)
    return chern_number(berry_curvature(frame))


def tknn_cherns(flux: Flux) -> list:
    """Band Chern numbers from the Diophantine rule ``p t_r = r (mod q)``, ``|t_r| <= q/2``."""
    p, q = flux.p, flux.q
    t = []
    for r in range(q + 1):
        cands = [s for s in range(-q, q + 1) if (p * s - r) % q == 0 and abs(s) <= q / 2]
        # for even q the two candidates +-q/2 arise only at r = q/2 (gap closure); take the smaller
        t.append(min(cands, key=abs) if cands else None)
    t[0], t[q] = 0, 0
    return [t[r + 1] - t[r] for r in range(q)]


@dataclass(frozen=True)
class LandauSpectrum:
    level: int
    eta: float
    flux: Flux
    flux_error: float
    intervals: tuple


def landau_symbol(V: FourierPotential) -> dict:
    """Symbol ``hhat(n1, n2) = Vhat(n1, -n2)`` of ``V(G1, -G2)``."""
    if V.lattice.dim != 2:
        raise GridError("Landau-level effective spectra need a two-dimensional potential")
    return {(n[0], -n[1]): v for n, v in V.coeffs.items()}


def landau_effective_spectrum(V: FourierPotential, eta: float, level: int,
                              sizes=(64, 64), q_max: int = 64,
                              tol: float = MERGE_TOL) -> LandauSpectrum:
    """Leading-order spectrum of Landau level ``level`` split by the periodic potential.

    The effective flux ``eta / (2 pi) mod 1`` is replaced by the nearest
    fraction with denominator ``<= q_max``; its distance is reported.
    """
    if not eta > 0:
        raise GridError(f"eta must be positive, got {eta}")
    if level < 0:
        raise GridError("Landau level index must be non-negative")
    alpha = (eta / (2 * np.pi)) % 1.0
    approx = Fraction(alpha).limit_denominator(q_max) % 1
    flux = Flux(approx.numerator, approx.denominator)
    err = abs(alpha - float(approx))
    err = min(err, 1 - err)
    base = level + 0.5
    symbol = landau_symbol(V)
    if not symbol:
        return LandauSpectrum(level, eta, flux, err, ((base, base),))
    spec = flux_spectrum(symbol, flux, sizes, tol / eta)
    intervals = tuple((base + eta * lo, base + eta * hi) for lo, hi in spec.intervals)
    return LandauSpectrum(level, eta, flux, err, intervals)
