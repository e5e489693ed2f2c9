"""Finite-difference verification of :func:`backward`."""
import numpy as np

from .layers import backward, forward


def grad_check(spec, params, x, loss_fn, epsilon=1e-3, check_input=True, dtype=np.float64):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(output) -> (loss, grad_output)``. The check runs on a ``dtype``
    copy of ``params`` in train mode; the caller's store is never modified.
    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    base = params.copy(dtype=dtype)
    x = np.array(x, dtype=dtype)

    def loss_at(store, inp):
        # fresh buffers each call so running-stat updates cannot leak between evaluations
        trial = store.copy()
        out, _ = forward(spec, trial, inp, "train")
        return loss_fn(out)[0]

    work = base.copy()
    out, cache = forward(spec, work, x, "train")
    _, g_out = loss_fn(out)
    grads, g_in = backward(spec, base, cache, g_out)

    worst = 0.0

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-8)

    for name, p in base.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = loss_at(base, x)
            flat[j] = orig - epsilon
            lm = loss_at(base, x)
            flat[j] = orig
            worst = max(worst, rel(g[j], (lp - lm) / (2 * epsilon)))
    if check_input:
        flat = x.reshape(-1)
        g = g_in.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = loss_at(base, x)
            flat[j] = orig - epsilon
            lm = loss_at(base, x)
            flat[j] = orig
            worst = max(worst, rel(g[j], (lp - lm) / (2 * epsilon)))
    return worst
