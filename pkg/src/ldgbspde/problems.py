"""Benchmark problems on [0, 2*pi] and the relative-error metric.

Both benchmarks share ``sigma = sin x``, ``sigma_bar = 1``, zero Neumann data,
the terminal value ``G(x, W_T) = cos x cos W_T`` and the closed-form solution

    u(x, t)   =  cos x exp(-(T - t)/2) cos W_t,
    psi(x, t) = -cos x exp(-(T - t)/2) sin W_t.

Substituting this pair into the equation with the reaction terms exactly as
they are usually printed leaves the residual ``sigma_bar^2 u_xx / 2 =
-cos x exp(-(T-t)/2) cos W_t / 2``, which nothing else cancels. The default
problems therefore carry one extra compensator term,
``+ cos x exp(-(T-t)/2) cos W_t / 2``, so the closed form is an exact solution.
Pass ``as_printed=True`` for the uncompensated reaction terms.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .ldg import CoefFns
from .meshspace import CoefField, l2_error

DEFAULT_T = 0.5
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """A benchmark: coefficients, domain ``[0, b]``, horizon ``T`` and, optionally, the exact pair.

    ``exact_u`` and ``exact_psi`` are callables ``(x, t, w)``.
    """

    name: str
    coefs: CoefFns
    b: float
    T: float
    exact_u: Callable | None = None
    exact_psi: Callable | None = None

    def __post_init__(self):
        if not (self.b > 0 and self.T > 0):
            raise ValueError("domain length and horizon must be positive")
        ts = np.linspace(0.0, self.T, 7)
        ws = np.linspace(-3.0, 3.0, 7)
        ends = np.array([0.0, self.b])
        for t in ts:
            s = np.asarray(self.coefs.sigma(ends[:, None], t, ws[None, :]), dtype=float)
            if np.max(np.abs(s)) > BOUNDARY_TOL:
                raise ValueError(
                    f"problem {self.name!r}: sigma must vanish at x=0 and x=b "
                    "(required by the zero boundary flux p-hat = 0)"
                )
        if self.exact_u is not None:
            xs = np.linspace(0.0, self.b, 11)[:, None]
            gap = self.coefs.terminal(xs, ws[None, :]) - self.exact_u(xs, self.T, ws[None, :])
            if np.max(np.abs(gap)) > BOUNDARY_TOL:
                raise ValueError(f"problem {self.name!r}: terminal data disagrees with the exact solution at T")

    def u0(self, x):
        """Exact initial profile u(x, 0) along W_0 = 0."""
        if self.exact_u is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return self.exact_u(x, 0.0, 0.0)

    def gamma0(self, x, t, w):
        """Reaction term at zero state, the forcing of the energy bound."""
        zero = np.zeros(np.broadcast(x, t, w).shape)
        return self.coefs.gamma(x, t, w, zero, zero, zero)


def _decay(t, T):
    return np.exp(-0.5 * (T - t))


def _common(T):
    def sigma(x, t, w):
        return np.broadcast_to(np.sin(x), np.broadcast(x, t, w).shape)

    def sigma_x(x, t, w):
        return np.broadcast_to(np.cos(x), np.broadcast(x, t, w).shape)

    def sigma_bar(x, t, w):
        return np.ones(np.broadcast(x, t, w).shape)

    def sigma_bar_x(x, t, w):
        return np.zeros(np.broadcast(x, t, w).shape)

    def terminal(x, w):
        return np.cos(x) * np.cos(w)

    def exact_u(x, t, w):
        return np.cos(x) * _decay(t, T) * np.cos(w)

    def exact_psi(x, t, w):
        return -np.cos(x) * _decay(t, T) * np.sin(w)

    return sigma, sigma_x, sigma_bar, sigma_bar_x, terminal, exact_u, exact_psi


def _forcing(x, t, w, T, compensate):
    """x,t,w-only part of the reaction term shared by both examples."""
    e = _decay(t, T)
    s2 = np.sin(x) ** 2
    f = 0.5 * s2 * np.cos(x) * e * np.cos(w) - s2 * e * np.sin(w)
    if compensate:
        f = f + 0.5 * np.cos(x) * e * np.cos(w)
    return f


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def example1(T: float = DEFAULT_T, as_printed: bool = False) -> ProblemSpec:
    """Globally Lipschitz reaction term built from ``ln(1 + e^v)``."""
    sigma, sigma_x, sigma_bar, sigma_bar_x, terminal, exact_u, exact_psi = _common(T)

    def gamma(x, t, w, u, v, psi):
        e = _decay(t, T)
        return _softplus(v) + _forcing(x, t, w, T, not as_printed) - _softplus(-np.sin(x) * e * np.cos(w))

    def partials(x, t, w, u, v, psi):
        return 0.0, _sigmoid(v), 0.0

    coefs = CoefFns(sigma, sigma_bar, sigma_x, sigma_bar_x, gamma, terminal,
                    kappa=1.0, K=1.0, L=1.0, gamma_partials=partials)
    name = "example1-printed" if as_printed else "example1"
    return ProblemSpec(name, coefs, 2 * np.pi, T, exact_u, exact_psi)


def example2(T: float = DEFAULT_T, as_printed: bool = False) -> ProblemSpec:
    """Quadratic reaction term ``u^2``; not globally Lipschitz."""
    sigma, sigma_x, sigma_bar, sigma_bar_x, terminal, exact_u, exact_psi = _common(T)

    def gamma(x, t, w, u, v, psi):
        e = _decay(t, T)
        return u**2 + _forcing(x, t, w, T, not as_printed) - np.cos(x) ** 2 * e**2 * np.cos(w) ** 2

    def partials(x, t, w, u, v, psi):
        return 2.0 * u, 0.0, 0.0

    # L has no global value; record the local bound on the sampled range |u| <= 1
    coefs = CoefFns(sigma, sigma_bar, sigma_x, sigma_bar_x, gamma, terminal,
                    kappa=1.0, K=1.0, L=2.0, gamma_partials=partials)
    name = "example2-printed" if as_printed else "example2"
    return ProblemSpec(name, coefs, 2 * np.pi, T, exact_u, exact_psi)


PROBLEMS = {
    "example1": example1,
    "example2": example2,
    "example1-printed": lambda T=DEFAULT_T: example1(T, as_printed=True),
    "example2-printed": lambda T=DEFAULT_T: example2(T, as_printed=True),
}


def get_problem(name: str, T: float = DEFAULT_T) -> ProblemSpec:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}") from None
    return factory(T)


def scaled(problem: ProblemSpec, c: float) -> ProblemSpec:
    """Scale the data of ``problem`` by ``c``: ``G -> c G`` and ``Gamma^0 -> c Gamma^0``.

    The new reaction term is ``Gamma(., u, v, psi) + (c - 1) Gamma^0``; the
    exact solution is dropped since it no longer applies.
    """
    base = problem.coefs

    def gamma(x, t, w, u, v, psi):
        return base.gamma(x, t, w, u, v, psi) + (c - 1.0) * problem.gamma0(x, t, w)

    def terminal(x, w):
        return c * base.terminal(x, w)

    coefs = replace(base, gamma=gamma, terminal=terminal)
    return replace(problem, name=f"{problem.name}*{c:g}", coefs=coefs, exact_u=None, exact_psi=None)


def relative_error(u_h: CoefField, u0, quad_order: int | None = None) -> float:
    """Ratio of squared L2 norms, ``||u_h - u0||^2 / ||u0||^2`` (no square root)."""
    zero = CoefField(u_h.space, np.zeros(u_h.space.shape))
    denom = l2_error(zero, u0, quad_order) ** 2
    if denom == 0.0:
        raise ZeroDivisionError("reference profile has zero L2 norm")
    return l2_error(u_h, u0, quad_order) ** 2 / denom
