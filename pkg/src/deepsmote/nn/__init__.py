"""Minimal numpy neural-network engine."""
from .gradcheck import grad_check
from .layers import ForwardCache, backward, forward
from .losses import mse_loss, softmax_cross_entropy
from .network import Network
from .optim import adam_step
from .params import ParamStore, init_params, load_params, save_params
from .spec import LayerSpec, NetworkSpec, classifier_spec, decoder_spec, encoder_spec

__all__ = [
    "ForwardCache",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "ParamStore",
    "adam_step",
    "backward",
    "classifier_spec",
    "decoder_spec",
    "encoder_spec",
    "forward",
    "grad_check",
    "init_params",
    "load_params",
    "mse_loss",
    "save_params",
    "softmax_cross_entropy",
]
