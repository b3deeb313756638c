"""Finite-difference gradient checking shared by the test modules.

All checks run in float64: central differences with eps=1e-5, compared
elementwise against autodiff with a relative tolerance of 1e-4 (the
denominator is floored so that finite-difference noise on near-zero
gradients does not trip the check).
"""

import numpy as np

from quantart.tensor import Tensor

EPS = 1e-5
REL_TOL = 1e-4


def make_params(rng, shapes, scale=1.0):
    """Random float64 leaf tensors, values in [-scale, scale]."""
    return {
        name: Tensor(rng.uniform(-scale, scale, size=shape).astype(np.float64),
                     requires_grad=True)
        for name, shape in shapes.items()
    }


def autodiff_grads(loss_fn, params):
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def finite_difference_grads(loss_fn, params, eps=EPS):
    grads = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        grads[name] = g.reshape(p.data.shape)
    return grads


def relative_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)
    return np.abs(a - b) / denom


def check_gradients(loss_fn, params, rel_tol=REL_TOL):
    """Assert autodiff == central finite differences for every leaf."""
    ad = autodiff_grads(loss_fn, params)
    fd = finite_difference_grads(loss_fn, params)
    for name in params:
        err = relative_error(ad[name], fd[name])
        worst = float(err.max()) if err.size else 0.0
        assert worst < rel_tol, (
            f"gradient mismatch for '{name}': worst rel err {worst:.3e}\n"
            f"autodiff:\n{ad[name]}\nfinite-diff:\n{fd[name]}"
        )
    return ad
