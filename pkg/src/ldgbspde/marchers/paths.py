"""Time grids and Brownian path batches for the scalar forward state X = W."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must start at 0 and be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)


def uniform_grid(T: float, dt: float) -> TimeGrid:
    """Uniform grid with ``M = round(T / dt)`` steps, so ``dt`` is adjusted to divide T."""
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    M = max(1, int(round(T / dt)))
    t = np.linspace(0.0, T, M + 1)
    t[-1] = T
    return TimeGrid(t)


@dataclass(frozen=True)
class BrownianBatch:
    """``B`` paths: states ``X (B, M+1)`` with ``X[:, 0] = 0`` and increments ``dW (B, M)``."""

    X: np.ndarray
    dW: np.ndarray
    seed: int | None


def sample_brownian(grid: TimeGrid, B: int, seed, zero_increments: bool = False) -> BrownianBatch:
    """Simulate ``X_{i+1} = X_i + dW_i`` with ``dW_i ~ N(0, dt_i)``.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    ``zero_increments`` is a test hook giving the degenerate path X = 0.
    """
    if not isinstance(B, (int, np.integer)) or B < 1:
        raise ValueError("need at least one path")
    if zero_increments:
        dW = np.zeros((B, grid.M))
    else:
        rng = np.random.default_rng(seed)
        dW = rng.standard_normal((B, grid.M)) * np.sqrt(grid.dt)
    X = np.zeros((B, grid.M + 1))
    np.cumsum(dW, axis=1, out=X[:, 1:])
    return BrownianBatch(X=X, dW=dW, seed=seed if isinstance(seed, (int, np.integer)) else None)
