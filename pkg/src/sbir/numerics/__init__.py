from sbir.numerics.adam import AdamState, adam_step, clip_by_norm
from sbir.numerics.autograd import (
    NonFiniteError,
    Tensor,
    UnsupportedPrimitiveError,
    grad,
)
from sbir.numerics.layers import MLP, Linear, MaskedLinear
from sbir.numerics.made import made_degrees, made_masks
from sbir.numerics.module import Module

__all__ = [
    "AdamState",
    "adam_step",
    "clip_by_norm",
    "NonFiniteError",
    "Tensor",
    "UnsupportedPrimitiveError",
    "grad",
    "MLP",
    "Linear",
    "MaskedLinear",
    "made_degrees",
    "made_masks",
    "Module",
]
