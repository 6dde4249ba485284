import numpy as np

from .tensor import NonFiniteError, Tensor


def numerical_grad(f, point, epsilon=1e-4):
    """Central finite differences of scalar ``f`` at ``point`` (ndarray)."""
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + epsilon
        fp = float(f(Tensor(x.copy())).data)
        flat[k] = orig - epsilon
        fm = float(f(Tensor(x.copy())).data)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"gradient_check: non-finite evaluation at coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * epsilon)
    return grad


def analytic_grad(f, point):
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = f(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("gradient_check: f must return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("gradient_check: non-finite evaluation at the base point")
    if out.requires_grad:
        out.backward()
    return x.grad


def gradient_check(f, point, epsilon=1e-4):
    """Max over coordinates of ``|analytic - fd| / max(1, |analytic|)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = analytic_grad(f, point)
    n = numerical_grad(f, point, epsilon)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))
