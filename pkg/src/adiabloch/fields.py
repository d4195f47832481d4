"""Slowly varying external potentials given by closed-form terms.

A :class:`ScalarField` is a sum of monomials ``c * prod r_i^p_i`` and
cosines ``c * cos(w . r + theta)``; each knows its value, gradient and
Hessian exactly.  :class:`ExternalFields` bundles the scalar potential
``phi``, the vector potential ``A`` and the slow scale ``epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError


@dataclass(frozen=True)
class Monomial:
    coeff: float
    powers: tuple

    def value(self, r):
        return self.coeff * np.prod([r[i] ** p for i, p in enumerate(self.powers)])

    def _deriv(self, r, orders):
        c = self.coeff
        out = 1.0
        for i, p in enumerate(self.powers):
            o = orders.count(i)
            if o > p:
                return 0.0
            # p!/(p-o)! r^(p-o)
            for j in range(o):
                c *= p - j
            out *= r[i] ** (p - o)
        return c * out

    def gradient(self, r):
        return np.array([self._deriv(r, [i]) for i in range(len(r))])

    def hessian(self, r):
        d = len(r)
        return np.array([[self._deriv(r, [i, j]) for j in range(d)] for i in range(d)])


@dataclass(frozen=True)
class Cosine:
    coeff: float
    wavevector: tuple
    phase: float = 0.0

    def value(self, r):
        return self.coeff * np.cos(np.dot(self.wavevector, r) + self.phase)

    def gradient(self, r):
        w = np.asarray(self.wavevector, dtype=float)
        return -self.coeff * np.sin(w @ r + self.phase) * w

    def hessian(self, r):
        w = np.asarray(self.wavevector, dtype=float)
        return -self.coeff * np.cos(w @ r + self.phase) * np.outer(w, w)


@dataclass(frozen=True)
class ScalarField:
    dim: int
    terms: tuple = ()

    def value(self, r) -> float:
        r = np.asarray(r, dtype=float)
        return float(sum((t.value(r) for t in self.terms), 0.0))

    def gradient(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return sum((t.gradient(r) for t in self.terms), np.zeros(self.dim))

    def hessian(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return sum((t.hessian(r) for t in self.terms), np.zeros((self.dim, self.dim)))

    def values_on(self, x) -> np.ndarray:
        """Vectorised value at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            if isinstance(t, Monomial):
                term = np.full(x.shape[:-1], float(t.coeff))
                for i, p in enumerate(t.powers):
                    term = term * x[..., i] ** p
            else:
                term = t.coeff * np.cos(x @ np.asarray(t.wavevector, dtype=float) + t.phase)
            out = out + term
        return out

    def depends_on(self, axis: int) -> bool:
        for t in self.terms:
            if isinstance(t, Monomial) and t.powers[axis] != 0 and t.coeff != 0:
                return True
            if isinstance(t, Cosine) and t.wavevector[axis] != 0 and t.coeff != 0:
                return True
        return False


def zero_field(dim: int) -> ScalarField:
    return ScalarField(dim, ())


def linear_field(coeffs) -> ScalarField:
    """``sum_i c_i r_i``."""
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    d = len(coeffs)
    terms = tuple(
        Monomial(float(c), tuple(1 if j == i else 0 for j in range(d))) for i, c in enumerate(coeffs) if c
    )
    return ScalarField(d, terms)


@dataclass(frozen=True, eq=False)
class ExternalFields:
    dim: int
    epsilon: float
    phi: ScalarField
    A: tuple | None = field(default=None)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise GridError(f"epsilon must be positive, got {self.epsilon}")
        if self.A is not None and len(self.A) != self.dim:
            raise GridError("vector potential needs one component per dimension")

    @property
    def has_vector_potential(self) -> bool:
        return self.A is not None and any(c.terms for c in self.A)

    def vector_potential(self, r) -> np.ndarray:
        if self.A is None:
            return np.zeros(self.dim)
        return np.array([c.value(r) for c in self.A])

    def vector_potential_jacobian(self, r) -> np.ndarray:
        """``J[j, i] = d A_j / d r_i``."""
        if self.A is None:
            return np.zeros((self.dim, self.dim))
        return np.array([c.gradient(r) for c in self.A])

    def vector_potential_hessians(self, r) -> np.ndarray:
        """``H[j, i, l] = d^2 A_j / d r_i d r_l``."""
        if self.A is None:
            return np.zeros((self.dim, self.dim, self.dim))
        return np.array([c.hessian(r) for c in self.A])

    def magnetic_field(self, r) -> np.ndarray:
        """``B = curl A`` embedded in three dimensions."""
        J = _pad_jac(self.vector_potential_jacobian(r))
        return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])

    def magnetic_field_gradient(self, r) -> np.ndarray:
        """``G[a, i] = d B_a / d r_i`` (three components, ``d`` derivatives)."""
        H = self.vector_potential_hessians(r)
        d = self.dim
        Hp = np.zeros((3, 3, d))
        Hp[:d, :d, :] = H
        # B_a = eps_abc d_b A_c
        return np.array([
            Hp[2, 1] - Hp[1, 2],
            Hp[0, 2] - Hp[2, 0],
            Hp[1, 0] - Hp[0, 1],
        ])

    def electric_field(self, r) -> np.ndarray:
        return -self.phi.gradient(r)


def _pad_jac(J):
    out = np.zeros((3, 3))
    d = J.shape[0]
    out[:d, :d] = J
    return out


def uniform_force(E, epsilon: float) -> ExternalFields:
    """Constant electric field ``E`` from ``phi(r) = -E . r``."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    return ExternalFields(len(E), float(epsilon), linear_field(-E))


def symmetric_gauge(B: float, epsilon: float, E=None) -> ExternalFields:
    """Two-dimensional uniform field ``B`` with ``A = B/2 (-r2, r1)``."""
    A = (ScalarField(2, (Monomial(-0.5 * B, (0, 1)),)), ScalarField(2, (Monomial(0.5 * B, (1, 0)),)))
    phi = linear_field(-np.asarray(E, dtype=float)) if E is not None else zero_field(2)
    return ExternalFields(2, float(epsilon), phi, A)
