from bitforge.autograd import ops
from bitforge.autograd.checkpoint import checksum, load_checkpoint, save_checkpoint
from bitforge.autograd.gradcheck import GradCheckReport, grad_check
from bitforge.autograd.optim import OptimizerState, adam_step, init_state, sgd_step
from bitforge.autograd.tensor import Tensor

__all__ = [
    "GradCheckReport",
    "OptimizerState",
    "Tensor",
    "adam_step",
    "checksum",
    "grad_check",
    "init_state",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "sgd_step",
]
