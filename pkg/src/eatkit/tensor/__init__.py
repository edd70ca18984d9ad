from .core import DTYPE, NonFiniteError, Parameter, Tape, Tensor, active_tape, as_tensor, assert_finite
from .gradcheck import grad_check, grad_check_params, relative_error
from . import ops

__all__ = [
    "DTYPE",
    "NonFiniteError",
    "Parameter",
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "assert_finite",
    "grad_check",
    "grad_check_params",
    "relative_error",
    "ops",
]
