from .adam import AdamState, adam_step
from .graph import OPS, Graph, Parameter, ShapeError, backward, conv_out, conv_transpose_out, forward
from .gradcheck import GradCheckReport, grad_check, relative_error

__all__ = [
    "AdamState", "adam_step", "OPS", "Graph", "Parameter", "ShapeError", "backward", "forward",
    "conv_out", "conv_transpose_out", "GradCheckReport", "grad_check", "relative_error",
]
