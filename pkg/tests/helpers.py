"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from fseg.tensor import Tensor


def numerical_gradient(f, t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar f() w.r.t. every entry of t.

    For complex tensors the real and imaginary parts are perturbed
    independently and packed as dL/dRe + i*dL/dIm, matching the engine's
    gradient convention.
    """
    base = t.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    complex_t = np.issubdtype(base.dtype, np.complexfloating)
    steps = [1.0, 1j] if complex_t else [1.0]
    while not it.finished:
        ix = it.multi_index
        for step in steps:
            t.data = base.copy()
            t.data[ix] = base[ix] + step * h
            fp = float(f())
            t.data = base.copy()
            t.data[ix] = base[ix] - step * h
            fm = float(f())
            d = (fp - fm) / (2 * h)
            grad[ix] += d * step if complex_t else d
        it.iternext()
    t.data = base
    return grad


def check_grad(build_loss, tensors, h=1e-5, rtol=1e-5, atol=1e-8):
    """Compare analytic grads against finite differences for each tensor.

    build_loss() must construct the loss from scratch (re-taping) so that
    perturbed data is picked up.
    """
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    for t in tensors:
        num = numerical_gradient(lambda: build_loss().data, t, h=h)
        ana = t.grad
        assert ana is not None, "missing analytic gradient"
        err = np.abs(ana - num)
        scale = np.maximum(np.abs(num), atol / max(rtol, 1e-300))
        rel = (err / np.maximum(scale, 1e-300)).max()
        assert np.allclose(ana, num, rtol=rtol, atol=atol), (
            f"gradient mismatch (max rel {rel:.3e}) for tensor of shape {t.shape}"
        )
