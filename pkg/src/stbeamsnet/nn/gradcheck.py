"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between autodiff and central-difference gradients.

    ``inputs`` holds numpy arrays or Tensors. Arrays are wrapped into fresh
    64-bit Tensors and passed to ``fn`` positionally; Tensors (typically module
    parameters that ``fn`` closes over) are perturbed in place and ``fn`` is
    called with no arguments. The error per coordinate is
    ``|g_ad - g_fd| / max(1, |g_fd|)``. ``max_coords`` caps the number of
    coordinates probed per input (sampled with ``rng``).
    """
    closed = all(isinstance(x, Tensor) for x in inputs)
    if closed:
        leaves = list(inputs)
        saved_flags = [t.requires_grad for t in leaves]
        for t in leaves:
            t.requires_grad = True
        call = lambda: fn()  # noqa: E731
    else:
        leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
        call = lambda: fn(*leaves)  # noqa: E731
    saved_grads = [t.grad for t in leaves]
    for t in leaves:
        t.grad = None

    out = call()
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, g_ad in zip(leaves, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g_ad = g_ad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(call().data)
            flat[i] = orig - eps
            down = float(call().data)
            flat[i] = orig
            g_fd = (up - down) / (2 * eps)
            worst = max(worst, abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd)))

    for t, g in zip(leaves, saved_grads):
        t.grad = g
    if closed:
        for t, flag in zip(leaves, saved_flags):
            t.requires_grad = flag
    return worst
