"""Central finite-difference oracle for the DBDP loss gradients."""
import numpy as np

from ldgbspde.nnad import loss_and_grad


def _loss(net_u, net_psi, batch, op):
    return loss_and_grad(net_u, net_psi, batch, op, update_stats=False)[0]


def gradient_errors(net_u, net_psi, batch, op, h=1e-5):
    """Per-parameter-array worst relative error of reverse-mode vs central differences.

    The relative error of an entry is ``|ad - fd| / max(|ad|, |fd|)``. The
    central difference carries a rounding error of about ``eps |L| / h``, so a
    relative error of 1e-5 is only resolvable for entries above
    ``1e5 eps |L| / h``. Smaller entries (mostly the ones a following batch
    norm makes exactly or nearly invariant) are returned separately as
    absolute errors in units of that rounding level.
    """
    loss, g_u, g_p = loss_and_grad(net_u, net_psi, batch, op, update_stats=False)
    rounding = np.finfo(float).eps * abs(loss) / h
    floor = 1e5 * rounding
    rel, absolute = {}, {}
    for tag, net, grads in (("u", net_u, g_u), ("psi", net_psi, g_p)):
        for name, param in net.params.items():
            fd = np.empty_like(param)
            flat, fdf = param.reshape(-1), fd.reshape(-1)
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + h
                lp = _loss(net_u, net_psi, batch, op)
                flat[idx] = keep - h
                lm = _loss(net_u, net_psi, batch, op)
                flat[idx] = keep
                fdf[idx] = (lp - lm) / (2 * h)
            ad = grads[name]
            big = np.maximum(np.abs(ad), np.abs(fd))
            mask = big > floor
            key = f"{tag}.{name}"
            rel[key] = float(np.max(np.abs(ad - fd)[mask] / big[mask])) if mask.any() else 0.0
            absolute[key] = float(np.max(np.abs(ad - fd)[~mask]) / rounding) if (~mask).any() else 0.0
    return rel, absolute
