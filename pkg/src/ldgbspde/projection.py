"""L2 and Gauss-Radau projections of smooth functions onto V_h^k.

The Gauss-Radau projections match the first k Legendre moments on every
cell and interpolate at one endpoint: the left one for ``project_gr_plus``,
the right one for ``project_gr_minus``. Target functions must accept numpy
arrays of physical points.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateBasisError
from .meshspace import CoefField, Space
from .polybasis import legendre_table

_LOCAL_CONDITION_LIMIT = 1e12


def _space(mesh_or_space, basis=None, quad_order=None) -> Space:
    if isinstance(mesh_or_space, Space):
        return mesh_or_space
    return Space(mesh_or_space, basis, quad_order)


def project_l2(u, mesh, basis=None, quad_order=None) -> CoefField:
    """Cellwise L2 projection. ``mesh`` may also be a ready :class:`Space`."""
    space = _space(mesh, basis, quad_order)
    return CoefField(space, space.project_nodal(np.asarray(u(space.xq), dtype=float)))


def _radau(u, space: Space, endpoint: str) -> CoefField:
    k = space.k
    quad = space.quad
    # Legendre modes 0..k-1 span P^{k-1} regardless of the working basis
    leg, _ = legendre_table(k, quad.nodes)
    tests = leg[:, :k]  # (q, k)
    moments = tests.T @ (quad.weights[:, None] * space.phi)  # (k, k+1)
    end_ref = space.phi_left if endpoint == "left" else space.phi_right
    system = np.vstack([moments, end_ref[None, :]])
    if np.linalg.cond(system) > _LOCAL_CONDITION_LIMIT:
        raise DegenerateBasisError("Gauss-Radau local system is singular")

    uq = np.asarray(u(space.xq), dtype=float)  # (N, q)
    rhs_moments = np.einsum("q,qm,jq->mj", quad.weights, tests, uq)  # (k, N)
    edges = space.mesh.edges
    x_end = edges[:-1] if endpoint == "left" else edges[1:]
    rhs_end = np.asarray(u(x_end), dtype=float).reshape(1, -1)
    coef = np.linalg.solve(system, np.vstack([rhs_moments, rhs_end]))
    return CoefField(space, coef)


def project_gr_plus(u, mesh, basis=None, quad_order=None) -> CoefField:
    """Gauss-Radau projection interpolating ``u`` at each cell's left endpoint."""
    return _radau(u, _space(mesh, basis, quad_order), "left")


def project_gr_minus(u, mesh, basis=None, quad_order=None) -> CoefField:
    """Gauss-Radau projection interpolating ``u`` at each cell's right endpoint."""
    return _radau(u, _space(mesh, basis, quad_order), "right")
