"""Parameter-efficient CNN scaling by repeating learnably transformed filter blocks.

A small numpy training engine (tape autodiff, im2col convolution, batch norm),
repeat groups that realize wide or deep weights from one trainable parent
(linear, swish-style ``s`` and sign-flip ``f`` transforms), a planner with exact
parameter / bit / FLOPs accounting, and a training harness with a CLI.
"""
from .kernels import BACKEND
from .planner import (ArchSpec, LayerSpec, PlanError, RealizedPlan, ScalePolicy, count_flops,
                      count_model_size_bits, count_trainable_params, flops_matched_search, realize)
from .repeat import RepeatGroup, RepeatSpec, init_transforms, realize_child, realize_weights
from .stats import aggregate_runs, relative_contribution
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ArchSpec", "LayerSpec", "PlanError", "RealizedPlan", "ScalePolicy", "count_flops",
    "count_model_size_bits", "count_trainable_params", "flops_matched_search", "realize",
    "RepeatGroup", "RepeatSpec", "init_transforms", "realize_child", "realize_weights",
    "aggregate_runs", "relative_contribution", "Tape", "Tensor", "backward",
]
