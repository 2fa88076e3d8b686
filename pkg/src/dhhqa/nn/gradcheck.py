"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                   index: np.ndarray | None = None) -> np.ndarray:
    """d f / d x by central differences, optionally only at flat ``index`` entries."""
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if index is None else np.asarray(index)
    out = np.zeros(idx.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f().item()
        flat[i] = orig - eps
        fm = f().item()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_grads(f: Callable[[], Tensor], inputs: dict[str, Tensor], eps: float = 1e-5,
                max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Relative error between backprop and finite differences for every input.

    ``max_entries`` caps how many randomly chosen entries per input are probed.
    """
    for t in inputs.values():
        t.zero_grad()
    f().backward()
    analytic = {k: t.grad.reshape(-1).copy() for k, t in inputs.items()}
    rng = np.random.default_rng(seed)
    errors = {}
    for k, t in inputs.items():
        n = t.data.size
        index = None
        if max_entries is not None and n > max_entries:
            index = np.sort(rng.choice(n, size=max_entries, replace=False))
        num = numerical_grad(f, t, eps, index)
        ana = analytic[k] if index is None else analytic[k][index]
        errors[k] = relative_error(ana, num)
    return errors
