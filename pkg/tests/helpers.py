"""Shared test utilities: finite-difference oracles and error metrics."""

import numpy as np

from mamba_hawkes import autograd as ag


def numeric_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at array x (perturbs in place)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-12):
    """Norm-based relative error between two arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def fd_param_grads(make_loss, params, h=1e-5):
    """Backprop through make_loss() once, then finite-difference every param.

    Returns (analytic, fd, loss_value): two {name: gradient array} maps and
    the loss at the unperturbed point.
    """
    for p in params:
        p.zero_grad()
    loss = make_loss()
    loss_value = float(loss.data)
    ag.backward(loss)
    analytic, fd = {}, {}
    for p in params:
        def f(arr, p=p):
            old = p.data
            p.data = arr
            try:
                with ag.no_grad():
                    return float(make_loss().data)
            finally:
                p.data = old
        name = p.name or repr(p)
        analytic[name] = p.grad.copy()
        fd[name] = numeric_grad(f, p.data.copy(), h=h)
    return analytic, fd, loss_value


def fd_noise_floor(loss_value, n_components, h):
    """Resolution limit of a central difference at step h: each loss
    evaluation carries ~eps*|loss| rounding, so the quotient is noisy at
    ~eps*|loss|/h per component (with safety factor)."""
    eps = np.finfo(np.float64).eps
    return 50.0 * eps * max(abs(loss_value), 1.0) / h * np.sqrt(n_components)


def check_param_grads(make_loss, params, h=1e-5):
    """Per-parameter noise-floored relative gradient error.

    For each tensor: max(0, ||a - fd|| - floor) / max(||a||, ||fd||, floor),
    where floor is the finite-difference resolution for this loss scale.
    Differences below what central differences can measure count as zero;
    genuine gradient bugs sit far above the floor and are reported at their
    ordinary relative size.
    """
    analytic, fd, loss_value = fd_param_grads(make_loss, params, h=h)
    errs = {}
    for name in analytic:
        a, f = analytic[name], fd[name]
        floor = fd_noise_floor(loss_value, a.size, h)
        diff = np.linalg.norm(a - f)
        errs[name] = max(0.0, diff - floor) / max(np.linalg.norm(a),
                                                  np.linalg.norm(f), floor)
    return errs


def global_grad_rel_err(analytic, fd):
    """Relative error of the full concatenated gradient vector."""
    a = np.concatenate([v.reshape(-1) for v in analytic.values()])
    f = np.concatenate([v.reshape(-1) for v in fd.values()])
    return rel_err(a, f)
