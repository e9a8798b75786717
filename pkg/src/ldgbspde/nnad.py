"""Small feedforward approximators with hand-written reverse-mode gradients.

Topology (fixed)::

    x (B, 1) -> BN0 -> fc1 -> BN1 -> ReLU -> fc2 -> BN2 -> ReLU -> fc3 -> BN3 -> out

Hidden width defaults to ``out_dim + 10``. Four batch-norm layers: one on
the raw input and one after each affine map; no activation after the last.

Batch norm uses the biased batch variance, ``eps = 1e-5``, and running
statistics updated as ``r <- m r + (1 - m) batch`` with momentum ``m = 0.9``.

Checkpoint layout (little-endian)::

    b"LDGNET1\\0"  magic
    uint32        number of arrays
    per array:    uint32 name length, name (utf-8), uint32 ndim,
                  ndim x uint64 dims, row-major float64 data
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBatchError, TrainingDivergenceError

BN_EPS = 1e-5
MAGIC = b"LDGNET1\0"


class MlpNet:
    """Scalar-input MLP with four batch-norm layers."""

    def __init__(self, out_dim: int, hidden: int | None = None, in_dim: int = 1,
                 rng: np.random.Generator | None = None, momentum: float = 0.9):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden if hidden is not None else out_dim + 10
        self.momentum = momentum
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [in_dim, self.hidden, self.hidden, out_dim]
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._bn_dim = {0: in_dim, 1: dims[1], 2: dims[2], 3: dims[3]}
        for i, n in self._bn_dim.items():
            self.params[f"bn{i}.gamma"] = np.ones(n)
            self.params[f"bn{i}.beta"] = np.zeros(n)
            self.buffers[f"bn{i}.mean"] = np.zeros(n)
            self.buffers[f"bn{i}.var"] = np.ones(n)
        for i in range(1, 4):
            fan_in, fan_out = dims[i - 1], dims[i]
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"fc{i}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[f"fc{i}.b"] = rng.uniform(-bound, bound, size=fan_out)
        self._cache = None

    # --- forward / backward ---------------------------------------------------

    def _bn_forward(self, i, z, train, update_stats):
        g, b = self.params[f"bn{i}.gamma"], self.params[f"bn{i}.beta"]
        if train:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                m = self.momentum
                self.buffers[f"bn{i}.mean"] = m * self.buffers[f"bn{i}.mean"] + (1 - m) * mean
                self.buffers[f"bn{i}.var"] = m * self.buffers[f"bn{i}.var"] + (1 - m) * var
        else:
            mean, var = self.buffers[f"bn{i}.mean"], self.buffers[f"bn{i}.var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mean) * inv_std
        return g * zhat + b, (zhat, inv_std)

    def forward(self, x: np.ndarray, mode: str = "train", update_stats: bool = True) -> np.ndarray:
        """Apply the network to a batch ``(B, in_dim)``.

        Train mode normalizes with batch statistics (and, if ``update_stats``,
        moves the running averages); infer mode uses the running statistics
        and never mutates the network.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        train = mode == "train"
        if train and x.shape[0] < 2:
            raise InvalidBatchError("train mode needs a batch of at least 2 rows")
        p = self.params
        cache = {}
        h, cache["bn0"] = self._bn_forward(0, x, train, update_stats)
        for i in (1, 2, 3):
            cache[f"fc{i}.in"] = h
            z = h @ p[f"fc{i}.W"] + p[f"fc{i}.b"]
            h, cache[f"bn{i}"] = self._bn_forward(i, z, train, update_stats)
            if i < 3:
                cache[f"relu{i}"] = h > 0
                h = np.where(h > 0, h, 0.0)
        self._cache = (cache, train)
        return h

    def _bn_backward(self, i, gy, cache, train, grads):
        zhat, inv_std = cache
        grads[f"bn{i}.beta"] = gy.sum(axis=0)
        grads[f"bn{i}.gamma"] = (gy * zhat).sum(axis=0)
        gzhat = gy * self.params[f"bn{i}.gamma"]
        if not train:
            return gzhat * inv_std
        # batch statistics depend on every row
        return inv_std * (gzhat - gzhat.mean(axis=0) - zhat * (gzhat * zhat).mean(axis=0))

    def backward(self, grad_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given ``dL/d(output)`` for the last forward pass.

        Returns ``(param_grads, dL/dx)``.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cache, train = self._cache
        p = self.params
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(grad_out, dtype=float)
        for i in (3, 2, 1):
            if i < 3:
                g = g * cache[f"relu{i}"]
            g = self._bn_backward(i, g, cache[f"bn{i}"], train, grads)
            h_in = cache[f"fc{i}.in"]
            grads[f"fc{i}.W"] = h_in.T @ g
            grads[f"fc{i}.b"] = g.sum(axis=0)
            g = g @ p[f"fc{i}.W"].T
        gx = self._bn_backward(0, g, cache["bn0"], train, grads)
        return grads, gx

    # --- state handling -------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = np.array(state[k], dtype=float)
        for k in self.buffers:
            self.buffers[k] = np.array(state[k], dtype=float)

    def copy(self) -> MlpNet:
        new = MlpNet.__new__(MlpNet)
        new.in_dim, new.out_dim, new.hidden = self.in_dim, self.out_dim, self.hidden
        new.momentum = self.momentum
        new._bn_dim = dict(self._bn_dim)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.buffers = {k: v.copy() for k, v in self.buffers.items()}
        new._cache = None
        return new

    def zero_(self) -> MlpNet:
        """Set every parameter to zero (output is then identically zero)."""
        for k in self.params:
            self.params[k][...] = 0.0
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values()) and all(
            np.all(np.isfinite(v)) and (not k.endswith(".var") or np.all(v >= 0)) for k, v in self.buffers.items()
        )


# --- checkpoints ---------------------------------------------------------------


def dump_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(a.tobytes(order="C"))
    return buf.getvalue()


def load_arrays(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    pos = 8
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", view, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(view[pos:pos + 8 * size], dtype="<f8").reshape(shape).copy()
        pos += 8 * size
    return out


def save_net(net: MlpNet, path) -> None:
    arrays = net.state()
    arrays["meta.dims"] = np.array([net.in_dim, net.hidden, net.out_dim, net.momentum], dtype=float)
    with open(path, "wb") as fh:
        fh.write(dump_arrays(arrays))


def load_net(path) -> MlpNet:
    with open(path, "rb") as fh:
        arrays = load_arrays(fh.read())
    in_dim, hidden, out_dim, momentum = arrays.pop("meta.dims")
    net = MlpNet(int(out_dim), int(hidden), int(in_dim), momentum=float(momentum))
    net.load_state(arrays)
    return net


# --- the one-step loss -----------------------------------------------------------


@dataclass
class DbdpBatch:
    """Operands of one stage's regression: states, increments and frozen targets."""

    i: int
    t: float
    dt: float
    X: np.ndarray  # (B,)
    dW: np.ndarray  # (B,)
    target: np.ndarray  # (B, D)

    def __post_init__(self):
        B = self.X.shape[0]
        if self.dW.shape != (B,) or self.target.ndim != 2 or self.target.shape[0] != B:
            raise ValueError("inconsistent DBDP batch shapes")


def loss_and_grad(net_u: MlpNet, net_psi: MlpNet, batch: DbdpBatch, op, mode: str = "train",
                  update_stats: bool = True):
    """Mean squared one-step residual and its gradients for both networks.

    The residual is ``target - (U - F(t, U, Psi) dt + Psi dW)``, with ``|.|``
    the Euclidean norm over all coefficients. Returns ``(loss, grads_u,
    grads_psi)``.
    """
    shape = op.space.shape
    B = batch.X.shape[0]
    U = net_u.forward(batch.X, mode, update_stats)
    Psi = net_psi.forward(batch.X, mode, update_stats)
    Uc = U.reshape((B,) + shape)
    Pc = Psi.reshape((B,) + shape)
    F, vjp = op.generator(batch.t, batch.X, Uc, Pc, with_vjp=True)
    F = F.reshape(B, -1)
    pred = U - batch.dt * F + batch.dW[:, None] * Psi
    r = batch.target - pred
    loss = float(np.mean(np.sum(r * r, axis=1)))
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss at stage {batch.i}", stage=batch.i)
    g_pred = -2.0 * r / B
    gFu, gFp = vjp((-batch.dt * g_pred).reshape((B,) + shape))
    gU = g_pred + gFu.reshape(B, -1)
    gP = batch.dW[:, None] * g_pred + gFp.reshape(B, -1)
    grads_u, _ = net_u.backward(gU)
    grads_psi, _ = net_psi.backward(gP)
    return loss, grads_u, grads_psi


# --- Adam ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.5
    decay_every: int = 200
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.decay_every <= 0:
            return self.lr
        return self.lr * self.decay ** (self.step // self.decay_every)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], st: AdamState) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``."""
    lr = st.current_lr()
    st.step += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1**st.step
    c2 = 1.0 - b2**st.step
    for k, g in grads.items():
        if k not in st.m:
            st.m[k] = np.zeros_like(g)
            st.v[k] = np.zeros_like(g)
        st.m[k] = b1 * st.m[k] + (1 - b1) * g
        st.v[k] = b2 * st.v[k] + (1 - b2) * g * g
        params[k] -= lr * (st.m[k] / c1) / (np.sqrt(st.v[k] / c2) + st.eps)
    return st
