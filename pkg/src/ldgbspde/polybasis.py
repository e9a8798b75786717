"""Reference-cell polynomial bases and Gauss-Legendre quadrature.

Everything here lives on the reference cell [-1, 1]. Physical cells are mapped
affinely by :mod:`ldgbspde.meshspace`; derivative tables returned here are
reference derivatives, callers apply the ``2 / h_j`` chain-rule factor.

Normalization convention: the Legendre basis uses the classical polynomials
P_n with P_n(1) = 1, so the reference Gram matrix is diag(2 / (2n + 1)).
The Lagrange basis is cardinal at the k + 1 Gauss-Lobatto points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUAD_POINTS = 32
MAX_DEGREE = 8
_NEWTON_TOL = 1e-15


@dataclass(frozen=True)
class QuadRule:
    """Gauss-Legendre rule on [-1, 1], exact for polynomials of degree 2q - 1."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the trailing axis of ``values`` (nodal samples) with the weights."""
        return np.asarray(values) @ self.weights


def legendre_table(n: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of P_0..P_n at ``x``.

    Returns two arrays of shape ``x.shape + (n + 1,)``.
    """
    x = np.asarray(x, dtype=float)
    P = np.empty(x.shape + (n + 1,))
    dP = np.empty_like(P)
    P[..., 0] = 1.0
    dP[..., 0] = 0.0
    if n >= 1:
        P[..., 1] = x
        dP[..., 1] = 1.0
    for m in range(1, n):
        # Bonnet recurrence and its derivative
        P[..., m + 1] = ((2 * m + 1) * x * P[..., m] - m * P[..., m - 1]) / (m + 1)
        dP[..., m + 1] = dP[..., m - 1] + (2 * m + 1) * P[..., m]
    return P, dP


def gauss_legendre(q: int) -> QuadRule:
    """q-point Gauss-Legendre rule via Newton iteration on the roots of P_q."""
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= MAX_QUAD_POINTS:
        raise ValueError(f"quadrature order must be an integer in [1, {MAX_QUAD_POINTS}], got {q!r}")
    q = int(q)
    i = np.arange(1, q + 1)
    # Tricomi initial guess, descending; flipped at the end
    x = np.cos(np.pi * (i - 0.25) / (q + 0.5))
    for _ in range(100):
        P, dP = legendre_table(q, x)
        dx = P[:, q] / dP[:, q]
        x = x - dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    P, dP = legendre_table(q, x)
    w = 2.0 / ((1.0 - x**2) * dP[:, q] ** 2)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadRule(nodes=x, weights=w, order=q)


def gauss_lobatto_nodes(n_points: int) -> np.ndarray:
    """The ``n_points`` Gauss-Lobatto points: ±1 and the roots of P'_{n-1}."""
    if n_points < 2:
        raise ValueError("Gauss-Lobatto needs at least 2 points")
    p = n_points - 1
    x = -np.cos(np.pi * np.arange(n_points) / p)
    inner = x[1:-1].copy()
    for _ in range(100):
        P, dP = legendre_table(p, inner)
        # P'_p = 0 solved by Newton; P''_p from the Legendre ODE
        d2 = (2 * inner * dP[..., p] - p * (p + 1) * P[..., p]) / (1 - inner**2)
        step = dP[..., p] / d2
        inner -= step
        if inner.size == 0 or np.max(np.abs(step)) < _NEWTON_TOL:
            break
    x[1:-1] = inner
    return 0.5 * (x - x[::-1])


@dataclass(frozen=True)
class BasisSet:
    """A basis of P^k on the reference cell.

    Both kinds are stored as a linear change of basis from Legendre modes:
    ``phi_i(x) = sum_n transform[n, i] * P_n(x)``.
    """

    kind: str
    degree: int
    transform: np.ndarray = field(repr=False)
    nodes: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, x) -> np.ndarray:
        """Basis values at any array of reference points, shape ``x.shape + (k+1,)``.

        No range check; use :func:`eval_basis` for the checked scalar entry point.
        """
        P, _ = legendre_table(self.degree, x)
        return P @ self.transform

    def derivatives(self, x) -> np.ndarray:
        _, dP = legendre_table(self.degree, x)
        return dP @ self.transform

    def gram(self) -> np.ndarray:
        """Exact reference Gram matrix ``int_{-1}^{1} phi_m phi_l``."""
        d = 2.0 / (2 * np.arange(self.dim) + 1)
        return self.transform.T @ (d[:, None] * self.transform)


def make_basis(kind: str = "legendre", degree: int = 2) -> BasisSet:
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree must be an integer in [1, {MAX_DEGREE}], got {degree!r}")
    degree = int(degree)
    if kind == "legendre":
        return BasisSet("legendre", degree, np.eye(degree + 1))
    if kind == "lagrange":
        nodes = gauss_lobatto_nodes(degree + 1)
        vander, _ = legendre_table(degree, nodes)
        # rows: nodes, cols: Legendre modes; cardinal basis is its inverse
        return BasisSet("lagrange", degree, np.linalg.inv(vander), nodes)
    raise ValueError(f"unknown basis kind {kind!r}; expected 'legendre' or 'lagrange'")


def _check_ref_point(x_ref) -> float:
    x = float(x_ref)
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"reference point {x_ref!r} outside [-1, 1]")
    return x


def eval_basis(b: BasisSet, x_ref: float) -> np.ndarray:
    return b.values(_check_ref_point(x_ref))


def eval_basis_deriv(b: BasisSet, x_ref: float) -> np.ndarray:
    """Reference-cell derivatives of all basis functions at ``x_ref``."""
    return b.derivatives(_check_ref_point(x_ref))
