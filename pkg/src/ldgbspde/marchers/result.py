from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..meshspace import CoefField


@dataclass
class SolveResult:
    """Outcome of a backward solve.

    ``history`` holds one entry per stage (time index, descending): training
    losses for DBDP, regression residuals for LSMC. ``energy`` carries the
    stability diagnostics when the backend computes them.
    """

    u0_field: CoefField
    backend: str
    seed: int
    wall_seconds: float
    history: list = field(default_factory=list)
    energy: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    nets: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.u0_field.coef)):
            raise ValueError("non-finite solution coefficients")


def eval_u0(res: SolveResult) -> CoefField:
    """The t = 0 coefficient field of a solve."""
    return res.u0_field
