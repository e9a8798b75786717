"""Deep backward dynamic programming over the coefficient-space BSDE.

Stage ``i`` (from ``M-1`` down to 0) trains a value net ``U_i`` and an
integrand net ``Psi_i`` on fresh Monte Carlo batches by minimizing

    E | U_{i+1}(X_{i+1}) - (U_i - F(t_i, U_i, Psi_i) dt_i + Psi_i dW_i) |^2

where the target is the terminal projection at ``i = M-1`` and the frozen
stage ``i+1`` value net (infer mode) otherwise.

With ``init_fit_steps > 0`` the stage ``M-1`` networks are first fitted
by plain regression to the terminal data, ``U ~ P G(X_T)`` and
``Psi ~ d/dw P G(X_T)`` (central difference in ``w``), and then warm-start
stage ``M-1``. The stage ``M-1`` loss itself is unchanged.

RNG layout: ``SeedSequence(seed).spawn(3)`` gives an initialization stream,
a sampling stream and a terminal-fit stream; the first two are spawned once
more into ``M`` per-stage children, stage ``i`` using child ``i``. Reruns
with the same seed are bit-identical.
"""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import TrainingDivergenceError
from ..ldg import LdgOperator
from ..meshspace import CoefField
from ..nnad import AdamState, DbdpBatch, MlpNet, adam_step, loss_and_grad, save_net
from .paths import TimeGrid
from .result import SolveResult


@dataclass
class DbdpConfig:
    batch: int = 256
    steps: int = 400
    terminal_steps: int | None = None  # steps for stage M-1; None -> steps
    init_fit_steps: int = 1000  # regression steps fitting the terminal data before stage M-1
    lr: float = 1e-2
    decay: float = 0.5
    decay_every: int = 200
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    hidden_extra: int = 10
    momentum: float = 0.9
    warm_start: bool = True
    seed: int = 0
    checkpoint_dir: str | None = None


def _stage_batch(rng, t, dt, B):
    """Fresh ``(X_i, dW_i)``: ``X_i = sqrt(t_i) xi`` has the law of ``W_{t_i}``."""
    xi = rng.standard_normal((2, B))
    return np.sqrt(t) * xi[0], np.sqrt(dt) * xi[1]


def solve_dbdp(op: LdgOperator, grid: TimeGrid, cfg: DbdpConfig | None = None) -> SolveResult:
    cfg = cfg or DbdpConfig()
    start = time.perf_counter()
    D = op.space.dim
    M = grid.M
    init_ss, sample_ss, init_fit_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_children = init_ss.spawn(M)
    sample_children = sample_ss.spawn(M)
    if cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)

    history = []
    nets: list = [None] * M
    target_net = None
    prev = None
    if cfg.init_fit_steps > 0:
        prev = fit_terminal(op, grid.T, cfg, np.random.default_rng(init_fit_ss))
    for i in range(M - 1, -1, -1):
        t, dt = float(grid.times[i]), float(grid.dt[i])
        if cfg.warm_start and prev is not None:
            net_u, net_psi = prev[0].copy(), prev[1].copy()
        else:
            rng = np.random.default_rng(init_children[i])
            net_u = MlpNet(D, D + cfg.hidden_extra, rng=rng, momentum=cfg.momentum)
            net_psi = MlpNet(D, D + cfg.hidden_extra, rng=rng, momentum=cfg.momentum)
        st_u = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay, cfg.decay_every)
        st_p = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay, cfg.decay_every)
        rng = np.random.default_rng(sample_children[i])
        losses = []
        last = None
        n_steps = cfg.steps
        if i == M - 1 and cfg.terminal_steps is not None:
            n_steps = cfg.terminal_steps
        for step in range(n_steps):
            X, dW = _stage_batch(rng, t, dt, cfg.batch)
            Xn = X + dW
            if target_net is None:
                target = op.terminal_coeffs(Xn).reshape(cfg.batch, D)
            else:
                target = target_net.forward(Xn, mode="infer")
            batch = DbdpBatch(i, t, dt, X, dW, target)
            try:
                loss, g_u, g_p = loss_and_grad(net_u, net_psi, batch, op)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(
                    f"training diverged at stage {i}, step {step}; last finite loss {last}",
                    stage=i, step=step, last_finite_loss=last) from exc
            adam_step(net_u.params, g_u, st_u)
            adam_step(net_psi.params, g_p, st_p)
            if not (net_u.all_finite() and net_psi.all_finite()):
                raise TrainingDivergenceError(
                    f"non-finite parameters at stage {i}, step {step}; last finite loss {loss}",
                    stage=i, step=step, last_finite_loss=loss)
            last = loss
            losses.append(loss)
        history.append({"stage": i, "final_loss": losses[-1],
                        "mean_loss_last50": float(np.mean(losses[-50:])), "losses": losses})
        if cfg.checkpoint_dir:
            save_net(net_u, os.path.join(cfg.checkpoint_dir, f"stage{i:04d}_u.ldgnet"))
            save_net(net_psi, os.path.join(cfg.checkpoint_dir, f"stage{i:04d}_psi.ldgnet"))
        nets[i] = (net_u, net_psi)
        target_net = net_u
        prev = (net_u, net_psi)

    u0 = evaluate_initial(nets[0][0], cfg.batch)
    settings = asdict(cfg)
    settings["rng"] = ("SeedSequence(seed).spawn(3) -> (init, sampling, terminal fit); the first two spawned into M "
                       "per-stage children; stage i uses child i")
    return SolveResult(u0_field=CoefField(op.space, u0.reshape(op.space.shape)), backend="dbdp",
                       seed=cfg.seed, wall_seconds=time.perf_counter() - start,
                       history=history, settings=settings, nets=nets)


def fit_terminal(op: LdgOperator, T: float, cfg: DbdpConfig, rng: np.random.Generator,
                 fd_step: float = 1e-4):
    """Regression fit of fresh nets to the terminal data and its ``w``-derivative."""
    D = op.space.dim
    net_u = MlpNet(D, D + cfg.hidden_extra, rng=rng, momentum=cfg.momentum)
    net_psi = MlpNet(D, D + cfg.hidden_extra, rng=rng, momentum=cfg.momentum)
    st_u = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay, cfg.decay_every)
    st_p = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay, cfg.decay_every)
    for _ in range(cfg.init_fit_steps):
        X = np.sqrt(T) * rng.standard_normal(cfg.batch)
        G = op.terminal_coeffs(X).reshape(cfg.batch, D)
        dG = (op.terminal_coeffs(X + fd_step) - op.terminal_coeffs(X - fd_step)).reshape(cfg.batch, D)
        dG /= 2.0 * fd_step
        for net, st, tgt in ((net_u, st_u, G), (net_psi, st_p, dG)):
            r = net.forward(X) - tgt
            grads, _ = net.backward(2.0 * r / cfg.batch)
            adam_step(net.params, grads, st)
    return net_u, net_psi


def evaluate_initial(net_u: MlpNet, batch: int = 2) -> np.ndarray:
    """``U_0(0)``.

    Every stage-0 training batch is the constant state ``X_0 = 0``, so the
    trained map is the train-mode output on a constant batch. Infer mode would
    divide by running variances that have decayed to about ``eps`` and amplify
    any lag of the running means, so the train-mode value is used. The
    network is not modified.
    """
    x = np.zeros(max(2, batch))
    return net_u.forward(x, mode="train", update_stats=False)[0].copy()
