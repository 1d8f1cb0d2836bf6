"""Central finite-difference gradient checks."""

import numpy as np

from cocl import tensor as T


def numeric_gradient(fn, param, eps=1e-6):
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = fn().item()
        flat[k] = old - eps
        down = fn().item()
        flat[k] = old
        out[k] = (up - down) / (2 * eps)
    return grad


def relative_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_gradients(fn, params, tol=1e-4, eps=1e-6):
    """Assert the tape gradient of scalar ``fn()`` matches central differences."""
    for p in params:
        p.zero_grad()
    T.backward(fn())
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = numeric_gradient(fn, p, eps)
        err = relative_error(analytic, numeric)
        assert err < tol, f"relative gradient error {err:.3e} exceeds {tol}"
