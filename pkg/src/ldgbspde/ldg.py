"""LDG spatial operators for the first-order system of the backward SPDE.

With ``v = u_x`` and ``p = (sigma^2 + sigma_bar^2) v / 2 + sigma psi``, the
semi-discrete problem is the coefficient-space BSDE

    -d u_t = F(t, u_t, psi_t) dt - psi_t dW_t,

where ``F`` is assembled cell by cell from the fluxes below and premultiplied
by the inverse mass matrix.

Fluxes (edge ``e`` sits between cells ``e-1`` and ``e``):

* ``"u-minus"``: u-hat = u^- and p-hat = p^+ at interior edges;
* ``"u-plus"``: u-hat = u^+ and p-hat = p^- at interior edges.

Both use u-hat = interior trace and p-hat = 0 at x = 0 and x = b (zero
Neumann data together with ``sigma = 0`` on the boundary).

Boundary cells are assembled directly from these definitions, with no ghost
cells.

All ``apply_*`` methods accept a :class:`~ldgbspde.meshspace.CoefField` or a
raw array of shape ``(..., k+1, N)``. The stochastic argument ``w`` (the
current Brownian value) is a scalar or an array matching the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DriverEvaluationError
from .meshspace import CoefField, Space

FLUX_VARIANTS = ("u-minus", "u-plus")


def _numeric_partials(gamma, x, t, w, u, v, psi):
    out = []
    args = [u, v, psi]
    for i in range(3):
        a = np.asarray(args[i], dtype=float)
        step = 1e-6 * (1.0 + np.abs(a))
        hi = list(args)
        lo = list(args)
        hi[i] = a + step
        lo[i] = a - step
        out.append((gamma(x, t, w, *hi) - gamma(x, t, w, *lo)) / (2 * step))
    return tuple(out)


@dataclass(frozen=True)
class CoefFns:
    """Coefficients of the backward SPDE.

    ``sigma``, ``sigma_bar`` and their x-derivatives are callables ``(x, t, w)``;
    ``gamma`` is ``(x, t, w, u, v, psi)`` and ``terminal`` is ``(x, w)``. All must
    broadcast over numpy arrays. ``gamma_partials`` returns the three partial
    derivatives of ``gamma`` in ``(u, v, psi)``; when absent, central
    differences are used.
    """

    sigma: Callable
    sigma_bar: Callable
    sigma_x: Callable
    sigma_bar_x: Callable
    gamma: Callable
    terminal: Callable
    kappa: float = 1.0
    K: float = 1.0
    L: float = 0.0
    gamma_partials: Callable | None = None

    def lam(self, x, t, w):
        return -self.sigma(x, t, w) * self.sigma_x(x, t, w) - self.sigma_bar(x, t, w) * self.sigma_bar_x(x, t, w)

    def mu(self, x, t, w):
        return -self.sigma_x(x, t, w)

    def diffusion(self, x, t, w):
        return 0.5 * (self.sigma(x, t, w) ** 2 + self.sigma_bar(x, t, w) ** 2)

    def partials(self, x, t, w, u, v, psi):
        if self.gamma_partials is not None:
            return self.gamma_partials(x, t, w, u, v, psi)
        return _numeric_partials(self.gamma, x, t, w, u, v, psi)

    def check_ellipticity(self, x, t, w) -> bool:
        return bool(np.all(np.asarray(self.sigma_bar(x, t, w)) ** 2 >= self.kappa))


def _as_array(f):
    return (f.coef, True) if isinstance(f, CoefField) else (np.asarray(f, dtype=float), False)


def _bcast_w(w, lead: tuple):
    """Reshape the stochastic argument so it broadcasts against ``lead + (N, q)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return w
    return w.reshape(w.shape + (1, 1))


class LdgOperator:
    """Immutable bundle of a discrete space, the coefficients and a flux choice."""

    def __init__(self, space: Space, coefs: CoefFns, flux: str = "u-minus"):
        if flux not in FLUX_VARIANTS:
            raise ValueError(f"flux must be one of {FLUX_VARIANTS}, got {flux!r}")
        self.space = space
        self.coefs = coefs
        self.flux = flux
        s = space
        # S[l, m] = int phi_l phi_m' on the reference cell
        self._S = s.phi.T @ (s.quad.weights[:, None] * s.dphi)
        self._Minv = s.ref_mass_inv
        self._inv_hh = 1.0 / s.half_widths

    # --- shape plumbing ---------------------------------------------------

    def _check(self, c: np.ndarray, name: str):
        if c.shape[-2:] != self.space.shape:
            raise ValueError(f"{name} has trailing shape {c.shape[-2:]}, expected {self.space.shape}")

    def _wrap(self, arr, as_field: bool):
        return CoefField(self.space, arr) if as_field else arr

    # --- edge fluxes --------------------------------------------------------

    def _u_hat(self, u):
        uL = self.space.trace_left(u)
        uR = self.space.trace_right(u)
        if self.flux == "u-minus":
            return np.concatenate([uL[..., :1], uR], axis=-1)
        return np.concatenate([uL, uR[..., -1:]], axis=-1)

    def _u_hat_T(self, g_hat):
        """Adjoint of :meth:`_u_hat`: edge cotangents ``(..., N+1)`` to coefficients."""
        s = self.space
        gL = np.zeros(g_hat.shape[:-1] + (s.N,))
        gR = np.zeros_like(gL)
        if self.flux == "u-minus":
            gL[..., 0] = g_hat[..., 0]
            gR[...] = g_hat[..., 1:]
        else:
            gL[...] = g_hat[..., :-1]
            gR[..., -1] = g_hat[..., -1]
        return s.phi_left[:, None] * gL[..., None, :] + s.phi_right[:, None] * gR[..., None, :]

    def _p_hat(self, p):
        s = self.space
        pL = s.trace_left(p)
        pR = s.trace_right(p)
        zero = np.zeros(p.shape[:-2] + (1,))
        inner = pL[..., 1:] if self.flux == "u-minus" else pR[..., :-1]
        return np.concatenate([zero, inner, zero], axis=-1)

    def _p_hat_T(self, g_hat):
        s = self.space
        g = np.zeros(g_hat.shape[:-1] + (s.N,))
        if self.flux == "u-minus":
            g[..., 1:] = g_hat[..., 1:-1]
            return s.phi_left[:, None] * g[..., None, :]
        g[..., :-1] = g_hat[..., 1:-1]
        return s.phi_right[:, None] * g[..., None, :]

    # --- the shared "weak derivative" block --------------------------------

    def _weak_derivative(self, c, c_hat):
        """M^{-1}(-int c z' + c_hat z^-|_{j+1/2} - c_hat z^+|_{j-1/2}) / (h_j / 2)."""
        s = self.space
        rhs = (
            -self._S.T @ c
            + s.phi_right[:, None] * c_hat[..., None, 1:]
            - s.phi_left[:, None] * c_hat[..., None, :-1]
        )
        return self._inv_hh * (self._Minv @ rhs)

    def _weak_derivative_T(self, g):
        """Adjoint: returns (cotangent on c, cotangent on c_hat)."""
        s = self.space
        grhs = self._inv_hh * (self._Minv.T @ g)
        gc = -(self._S @ grhs)
        right = s.phi_right @ grhs
        left = s.phi_left @ grhs
        g_hat = np.zeros(g.shape[:-2] + (s.N + 1,))
        g_hat[..., 1:] += right
        g_hat[..., :-1] -= left
        return gc, g_hat

    def _V(self, u):
        return self._weak_derivative(u, self._u_hat(u))

    def _V_T(self, g):
        gc, g_hat = self._weak_derivative_T(g)
        return gc + self._u_hat_T(g_hat)

    def _nodal_T(self, g_nodal):
        return np.swapaxes(g_nodal @ self.space.phi, -1, -2)

    def _project_T(self, g):
        """Adjoint of ``values -> M^{-1} load(values)``: coefficient cotangent to nodal."""
        s = self.space
        return s.quad.weights * s.nodal((self._Minv.T @ g))

    # --- public operators ---------------------------------------------------

    def apply_V(self, u):
        """Discrete gradient v_h of u_h."""
        arr, fld = _as_array(u)
        self._check(arr, "u")
        return self._wrap(self._V(arr), fld)

    def apply_P(self, t: float, w, v, psi):
        """Cellwise projection of ``(sigma^2 + sigma_bar^2) v / 2 + sigma psi``."""
        va, fld = _as_array(v)
        pa, _ = _as_array(psi)
        self._check(va, "v")
        self._check(pa, "psi")
        return self._wrap(self._P(t, w, va, pa)[0], fld)

    def _coef_tables(self, t, w, lead):
        s, c = self.space, self.coefs
        wb = _bcast_w(w, lead)
        x = s.xq
        return {
            "a": c.diffusion(x, t, wb),
            "sig": c.sigma(x, t, wb),
            "lam": c.lam(x, t, wb),
            "mu": c.mu(x, t, wb),
            "w": wb,
        }

    def _P(self, t, w, v, psi, tab=None):
        s = self.space
        if tab is None:
            tab = self._coef_tables(t, w, v.shape[:-2])
        vq = s.nodal(v)
        psiq = s.nodal(psi)
        p = s.project_nodal(tab["a"] * vq + tab["sig"] * psiq)
        return p, vq, psiq, tab

    def _gamma(self, t, tab, uq, vq, psiq):
        x = self.space.xq
        g = np.asarray(self.coefs.gamma(x, t, tab["w"], uq, vq, psiq), dtype=float)
        g = np.broadcast_to(g, uq.shape)
        if not np.all(np.isfinite(g)):
            idx = np.argwhere(~np.isfinite(g))[0]
            j, q = idx[-2], idx[-1]
            wv = np.broadcast_to(tab["w"], uq.shape)[tuple(idx)]
            point = dict(x=float(x[j, q]), t=float(t), w=float(wv), u=float(uq[tuple(idx)]),
                         v=float(vq[tuple(idx)]), psi=float(psiq[tuple(idx)]))
            raise DriverEvaluationError(f"reaction term is not finite at {point}", point)
        return g

    def generator(self, t: float, w, u: np.ndarray, psi: np.ndarray, with_vjp: bool = False):
        """Raw-array generator ``F(t, u, psi)``; optionally also its VJP closure.

        The closure maps a cotangent on ``F`` (same shape) to cotangents on
        ``(u, psi)``.
        """
        s, c = self.space, self.coefs
        v = self._V(u)
        p, vq, psiq, tab = self._P(t, w, v, psi)
        uq = s.nodal(u)
        gam = self._gamma(t, tab, uq, vq, psiq)
        part1 = self._weak_derivative(p, self._p_hat(p))
        part2 = s.project_nodal(tab["lam"] * vq + tab["mu"] * psiq + gam)
        F = part1 + part2
        if not with_vjp:
            return F

        def vjp(gF):
            gu_q, gv_q, gpsi_q = c.partials(s.xq, t, tab["w"], uq, vq, psiq)
            g2 = self._project_T(gF)
            g_vq = (tab["lam"] + gv_q) * g2
            g_psiq = (tab["mu"] + gpsi_q) * g2
            g_uq = gu_q * g2
            gp_direct, gp_hat = self._weak_derivative_T(gF)
            gp = gp_direct + self._p_hat_T(gp_hat)
            g1 = self._project_T(gp)
            g_vq = g_vq + tab["a"] * g1
            g_psiq = g_psiq + tab["sig"] * g1
            g_v = self._nodal_T(g_vq)
            g_u = self._nodal_T(g_uq) + self._V_T(g_v)
            return g_u, self._nodal_T(g_psiq)

        return F, vjp

    def generator_jvp(self, t: float, w, u, psi, du, dpsi):
        """Directional derivative of F at ``(u, psi)`` along ``(du, dpsi)``."""
        s, c = self.space, self.coefs
        v = self._V(u)
        _, vq, psiq, tab = self._P(t, w, v, psi)
        uq = s.nodal(u)
        gu_q, gv_q, gpsi_q = c.partials(s.xq, t, tab["w"], uq, vq, psiq)
        dv = self._V(du)
        dvq = s.nodal(dv)
        dpsiq = s.nodal(dpsi)
        duq = s.nodal(du)
        dp = s.project_nodal(tab["a"] * dvq + tab["sig"] * dpsiq)
        part1 = self._weak_derivative(dp, self._p_hat(dp))
        part2 = s.project_nodal((tab["lam"] + gv_q) * dvq + (tab["mu"] + gpsi_q) * dpsiq + gu_q * duq)
        return part1 + part2

    def jacobian_u(self, t: float, w: float, u: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """Dense ``dF/du`` in flattened coordinates, ``(D, D)``, at a single state."""
        s = self.space
        D = s.dim
        eye = np.eye(D).reshape((D,) + s.shape)
        cols = self.generator_jvp(t, w, u, psi, eye, np.zeros_like(eye))
        return cols.reshape(D, D).T

    def apply_F(self, t: float, w, u, psi):
        ua, fld = _as_array(u)
        pa, _ = _as_array(psi)
        self._check(ua, "u")
        self._check(pa, "psi")
        return self._wrap(self.generator(t, w, ua, pa), fld)

    def terminal_coeffs(self, w_T):
        """L2 projection of ``G(., w_T)``; array input gives ``(B, k+1, N)``."""
        s = self.space
        w = np.asarray(w_T, dtype=float)
        vals = np.asarray(self.coefs.terminal(s.xq, _bcast_w(w, w.shape)), dtype=float)
        vals = np.broadcast_to(vals, w.shape + s.xq.shape)
        coef = s.project_nodal(vals)
        return CoefField(s, coef) if w.ndim == 0 else coef

    def flux_boundary_sum(self, u, p):
        """Summed cross terms of the energy identity; zero for both flux variants."""
        ua, _ = _as_array(u)
        pa, _ = _as_array(p)
        self._check(ua, "u")
        self._check(pa, "p")
        s = self.space
        w = s.quad.weights
        uq, pq = s.nodal(ua), s.nodal(pa)
        duq = np.einsum("ql,...lj->...jq", s.dphi, ua)
        dpq = np.einsum("ql,...lj->...jq", s.dphi, pa)
        # reference-cell integrals: the h/2 and 2/h factors cancel
        volume = -np.einsum("q,...jq->...", w, pq * duq + uq * dpq)
        u_hat, p_hat = self._u_hat(ua), self._p_hat(pa)
        uL, uR = s.trace_left(ua), s.trace_right(ua)
        pL, pR = s.trace_left(pa), s.trace_right(pa)
        edges = (
            np.sum(p_hat[..., 1:] * uR - p_hat[..., :-1] * uL, axis=-1)
            + np.sum(u_hat[..., 1:] * pR - u_hat[..., :-1] * pL, axis=-1)
        )
        total = volume + edges
        return float(total) if np.ndim(total) == 0 else total
