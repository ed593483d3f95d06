"""Power-series-expansion neural networks (PSENet) and exact constructions."""

from .autodiff import Tape, Tensor, backward, input_derivative, relu_pow
from .models import (
    FcLayer,
    Network,
    OneHiddenPse,
    PseGeneralizedLayer,
    PseSharedLayer,
    ResNetBlock,
    build_network,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "input_derivative",
    "relu_pow",
    "FcLayer",
    "ResNetBlock",
    "PseSharedLayer",
    "PseGeneralizedLayer",
    "Network",
    "OneHiddenPse",
    "build_network",
    "save_model",
    "load_model",
]
