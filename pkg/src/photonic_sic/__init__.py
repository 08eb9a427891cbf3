"""Simulation testbench for multipath self-interference cancellation with an
adaptive-order least-squares channel estimator."""

from .channel import MultipathChannel, Tap, apply_multipath
from .estimator import (
    ChannelEstimate,
    LsConfig,
    NestedLsSolver,
    OrderTrace,
    adaptive_order_loop,
    ls_estimate,
    reconstruct_reference,
)
from .signals import SampledSignal, SymbolStream

__version__ = "0.1.0"

__all__ = [
    "ChannelEstimate", "LsConfig", "MultipathChannel", "NestedLsSolver", "OrderTrace",
    "SampledSignal", "SymbolStream", "Tap", "adaptive_order_loop", "apply_multipath",
    "ls_estimate", "reconstruct_reference",
]
