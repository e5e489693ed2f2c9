"""Spec + parameters bundled into one callable object."""
from dataclasses import dataclass

import numpy as np

from .layers import backward, forward
from .params import ParamStore, init_params
from .spec import NetworkSpec


@dataclass
class Network:
    spec: NetworkSpec
    params: ParamStore

    @classmethod
    def create(cls, spec, rng, init="dcgan"):
        return cls(spec, init_params(spec, rng, init=init))

    def forward(self, x, mode="train"):
        return forward(self.spec, self.params, x, mode)

    def backward(self, cache, grad_output):
        return backward(self.spec, self.params, cache, grad_output)

    def predict(self, x, batch_size=256):
        """Eval-mode forward in fixed-size chunks."""
        outs = [forward(self.spec, self.params, x[i:i + batch_size], "eval")[0] for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0,) + self.spec.output_shape, dtype=np.float32)
        return np.concatenate(outs)
