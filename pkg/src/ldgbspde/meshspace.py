"""Cell partitions of [0, b], the broken space V_h^k and coefficient fields.

Coefficient arrays have shape ``(..., k+1, N)``: entry ``[l, j]`` multiplies
basis function ``l`` on cell ``j`` (0-based). Leading axes are batch axes
(Monte Carlo paths); every routine that takes raw arrays broadcasts over them.
Flattening to a vector uses row-major order, ``flat = l * N + j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateBasisError
from .polybasis import BasisSet, QuadRule, gauss_legendre, make_basis

MASS_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ElementMesh:
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 3:
            raise ValueError("a mesh needs at least 2 cells")
        if edges[0] != 0.0:
            raise ValueError("the first edge must be 0")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise ValueError("cell edges must be finite and strictly increasing")
        object.__setattr__(self, "edges", edges)

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    @property
    def N(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def h(self) -> float:
        return float(self.widths.max())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def locate(self, x, side: str = "right") -> np.ndarray:
        """Cell index owning ``x``; at an edge ``side`` picks the left or right limit.

        ``side`` is ``"left"`` (limit from below, x^-) or ``"right"`` (x^+).
        The domain ends fall back to the only adjacent cell.
        """
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > self.b)) or not np.all(np.isfinite(x)):
            raise ValueError(f"points outside [0, {self.b}]")
        if side in ("left", "left-limit"):
            cell = np.searchsorted(self.edges, x, side="left") - 1
        elif side in ("right", "right-limit"):
            cell = np.searchsorted(self.edges, x, side="right") - 1
        else:
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        return np.clip(cell, 0, self.N - 1)


def make_uniform_mesh(b: float, N: int) -> ElementMesh:
    if not (np.isfinite(b) and b > 0):
        raise ValueError(f"domain length must be positive, got {b!r}")
    if not isinstance(N, (int, np.integer)) or N < 2:
        raise ValueError(f"need at least 2 cells, got {N!r}")
    edges = np.linspace(0.0, b, int(N) + 1)
    edges[-1] = b
    return ElementMesh(edges)


@dataclass(frozen=True)
class MassMatrices:
    """Per-cell mass matrices ``A[j]`` and their inverses, each ``(N, k+1, k+1)``."""

    A: np.ndarray
    A_inv: np.ndarray


def assemble_mass(mesh: ElementMesh, basis: BasisSet, quad_order: int | None = None) -> MassMatrices:
    quad = gauss_legendre(quad_order or basis.degree + 2)
    phi = basis.values(quad.nodes)  # (q, k+1)
    ref = phi.T @ (quad.weights[:, None] * phi)
    if np.linalg.cond(ref) > MASS_CONDITION_LIMIT:
        raise DegenerateBasisError(f"reference Gram matrix of the {basis.kind} basis is singular")
    A = 0.5 * mesh.widths[:, None, None] * ref
    ref_inv = np.linalg.solve(ref, np.eye(basis.dim))
    A_inv = (2.0 / mesh.widths)[:, None, None] * ref_inv
    return MassMatrices(A=A, A_inv=A_inv)


@dataclass(frozen=True, eq=False)
class Space:
    """V_h^k on a mesh, with cached quadrature tables.

    ``quad_order`` drives every element integral; it defaults to ``k + 2``.
    """

    mesh: ElementMesh
    basis: BasisSet
    quad_order: int | None = None
    quad: QuadRule = field(init=False, repr=False)

    def __post_init__(self):
        q = self.quad_order or self.basis.degree + 2
        object.__setattr__(self, "quad_order", q)
        object.__setattr__(self, "quad", gauss_legendre(q))

    @property
    def k(self) -> int:
        return self.basis.degree

    @property
    def N(self) -> int:
        return self.mesh.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.basis.dim, self.mesh.N)

    @property
    def dim(self) -> int:
        return self.basis.dim * self.mesh.N

    @cached_property
    def phi(self) -> np.ndarray:
        """Basis values at quadrature nodes, ``(q, k+1)``."""
        return self.basis.values(self.quad.nodes)

    @cached_property
    def dphi(self) -> np.ndarray:
        """Reference derivatives at quadrature nodes, ``(q, k+1)``."""
        return self.basis.derivatives(self.quad.nodes)

    @cached_property
    def phi_left(self) -> np.ndarray:
        return self.basis.values(-1.0)

    @cached_property
    def phi_right(self) -> np.ndarray:
        return self.basis.values(1.0)

    @cached_property
    def _wphi(self) -> np.ndarray:
        return self.quad.weights[:, None] * self.phi

    @cached_property
    def ref_mass(self) -> np.ndarray:
        return self.phi.T @ (self.quad.weights[:, None] * self.phi)

    @cached_property
    def ref_mass_inv(self) -> np.ndarray:
        if np.linalg.cond(self.ref_mass) > MASS_CONDITION_LIMIT:
            raise DegenerateBasisError("reference mass matrix is singular")
        return np.linalg.solve(self.ref_mass, np.eye(self.basis.dim))

    @cached_property
    def mass(self) -> MassMatrices:
        return assemble_mass(self.mesh, self.basis, self.quad_order)

    @cached_property
    def xq(self) -> np.ndarray:
        """Physical quadrature nodes, ``(N, q)``."""
        m = self.mesh
        return m.centers[:, None] + 0.5 * m.widths[:, None] * self.quad.nodes[None, :]

    @cached_property
    def half_widths(self) -> np.ndarray:
        return 0.5 * self.mesh.widths

    # --- raw-array kernels, broadcasting over leading axes ---------------

    def nodal(self, coef: np.ndarray) -> np.ndarray:
        """Field values at quadrature nodes: ``(..., k+1, N) -> (..., N, q)``."""
        return np.swapaxes(self.phi @ coef, -1, -2)

    def load(self, values: np.ndarray) -> np.ndarray:
        """Reference moments ``sum_q w_q phi_m(xi_q) f(x_jq)``: ``(..., N, q) -> (..., k+1, N)``.

        Physical integrals are these times ``h_j / 2``.
        """
        return np.swapaxes(values @ self._wphi, -1, -2)

    def project_nodal(self, values: np.ndarray) -> np.ndarray:
        """Cellwise discrete L2 projection of nodal samples onto V_h^k."""
        return self.ref_mass_inv @ self.load(values)

    def trace_left(self, coef: np.ndarray) -> np.ndarray:
        """u_h(x_{j-1/2}^+) for every cell, ``(..., N)``."""
        return self.phi_left @ coef

    def trace_right(self, coef: np.ndarray) -> np.ndarray:
        """u_h(x_{j+1/2}^-) for every cell, ``(..., N)``."""
        return self.phi_right @ coef

    def sq_norm(self, coef: np.ndarray) -> np.ndarray:
        """Exact squared L2 norm of fields via the mass matrices, over leading axes."""
        Ac = self.ref_mass @ coef
        return np.sum(coef * Ac, axis=-2) @ self.half_widths

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros(batch + self.shape)


def make_space(b: float, N: int, k: int, kind: str = "legendre", quad_order: int | None = None) -> Space:
    return Space(make_uniform_mesh(b, N), make_basis(kind, k), quad_order)


@dataclass(frozen=True, eq=False)
class CoefField:
    """One field of V_h^k: coefficients ``(k+1, N)`` on a :class:`Space`."""

    space: Space
    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != self.space.shape:
            raise ValueError(f"coefficient shape {coef.shape} does not match space {self.space.shape}")
        if not np.all(np.isfinite(coef)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coef", coef)

    @property
    def mesh(self) -> ElementMesh:
        return self.space.mesh

    @property
    def basis(self) -> BasisSet:
        return self.space.basis

    def __call__(self, x, side: str = "right"):
        return eval_field(self, x, side)

    def with_coef(self, coef) -> CoefField:
        return CoefField(self.space, coef)

    def flat(self) -> np.ndarray:
        return self.coef.reshape(-1)


def eval_field(f: CoefField, x, side: str = "right"):
    """Evaluate a field at physical points; scalar in, scalar out."""
    mesh = f.space.mesh
    xa = np.asarray(x, dtype=float)
    cell = mesh.locate(xa, side)
    xi = (xa - mesh.centers[cell]) / (0.5 * mesh.widths[cell])
    xi = np.clip(xi, -1.0, 1.0)
    vals = f.basis.values(xi)  # (..., k+1)
    out = np.einsum("...l,l...->...", vals, f.coef[:, cell])
    return float(out) if np.ndim(out) == 0 else out


def _error_quad(space: Space, quad_order: int | None) -> tuple[np.ndarray, np.ndarray, QuadRule]:
    quad = gauss_legendre(quad_order or max(space.quad_order + 2, space.k + 4))
    m = space.mesh
    x = m.centers[:, None] + 0.5 * m.widths[:, None] * quad.nodes[None, :]
    vals = space.basis.values(quad.nodes)  # (q, k+1)
    return x, vals, quad


def l2_norm(f: CoefField, quad_order: int | None = None) -> float:
    return l2_error(f, None, quad_order)


def l2_error(f: CoefField, g=None, quad_order: int | None = None) -> float:
    """L2 distance between a field and a function of x (``g=None`` gives the norm).

    The quadrature is finer than the working rule (``k + 4`` points by default)
    so that projection errors are not hidden by superconvergence at the
    working nodes.
    """
    space = f.space
    x, vals, quad = _error_quad(space, quad_order)
    fh = np.einsum("ql,lj->jq", vals, f.coef)
    diff = fh if g is None else fh - np.broadcast_to(np.asarray(g(x), dtype=float), fh.shape)
    total = np.sum(0.5 * space.mesh.widths[:, None] * quad.weights[None, :] * diff**2)
    return float(np.sqrt(total))
