"""Finite-difference utilities shared by the gradient tests."""

import numpy as np

STEP = 1e-5


def numeric_grad(f, arr, step=STEP):
    """Central differences of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + step
        a = f()
        arr[idx] = old - step
        b = f()
        arr[idx] = old
        out[idx] = (a - b) / (2 * step)
    return out


def rel_err(num, ana):
    num = np.asarray(num, dtype=float)
    ana = np.asarray(ana, dtype=float)
    scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
    return float(np.linalg.norm(num - ana) / scale)


def layer_grad_errors(layer, X, dY, training=False):
    """Relative error of every parameter gradient and the input gradient of ``sum(dY * Y)``."""
    _, cache = layer.forward(X, training)
    g = layer.backward(cache, dY)

    def f():
        return float((layer.forward(X, training)[0] * dY).sum())

    errs = {name: rel_err(numeric_grad(f, p), g.params[name]) for name, p in layer.params.items()}
    errs["input"] = rel_err(numeric_grad(f, X), g.input)
    return errs


def model_grad_errors(model, X, training=True):
    """Relative error of the full training loss gradient for every parameter array."""
    _, grads, _ = model.loss_and_grads(X, training=training)

    def f():
        return model.loss_and_grads(X, training=training)[0].total

    return {(i, name): rel_err(numeric_grad(f, p), grads[i][name]) for i, name, p in model.parameters()}


def cox_de_boor(x, k, i, t):
    """Textbook scalar recursion, degree ``k``, basis index ``i`` over knots ``t``."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0 if t[i + k] == t[i] else (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(x, k - 1, i, t)
    right = 0.0
    if t[i + k + 1] != t[i + 1]:
        right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(x, k - 1, i + 1, t)
    return left + right
