"""Adam with bias correction."""
import numpy as np

from ..errors import NumericError
from .params import ParamStore


def adam_step(params: ParamStore, grads: dict, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> ParamStore:
    """Apply one Adam update to ``params`` in place and return it.

    Raises :class:`NumericError` before touching anything if a gradient is
    not finite.
    """
    for name, g in grads.items():
        if name not in params.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params.params[name].shape:
            raise ValueError(f"gradient {name} has shape {g.shape}, parameter has {params.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    params.t += 1
    t = params.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params.params[name]
        m = params.m.get(name)
        if m is None:
            m = params.m[name] = np.zeros_like(p)
            params.v[name] = np.zeros_like(p)
        v = params.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p -= step.astype(p.dtype, copy=False)
    return params
