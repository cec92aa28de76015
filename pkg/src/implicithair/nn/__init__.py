"""Minimal deterministic tensor/NN kernel used by both networks."""

from . import tensor as ops
from .checkpoint import Checkpoint, make_checkpoint, params_digest
from .gradcheck import GradCheckReport, grad_check, input_grad_check
from .layers import MLP, Conv, Dense, LayerSpec, Module, check_chain, spec_digest
from .optim import Adam, AdamConfig, adam_step
from .tensor import Tensor

__all__ = [
    "Adam", "AdamConfig", "Checkpoint", "Conv", "Dense", "GradCheckReport", "LayerSpec", "MLP", "Module",
    "Tensor", "adam_step", "check_chain", "grad_check", "input_grad_check", "make_checkpoint", "ops",
    "params_digest", "spec_digest",
]
