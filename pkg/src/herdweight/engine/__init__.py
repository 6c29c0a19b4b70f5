"""Minimal reverse-mode differentiation engine (float64, CPU).

Provides exactly the operations the point-cloud regressors need: last-axis
linear maps, batched matrix products, batch normalization, ReLU/LeakyReLU,
inverted dropout, point-axis pooling, Huber / smooth-L1 losses, Adam/AdamW,
a one-cycle schedule, and plateau-based training control.
"""

from .autodiff import (
    Tensor,
    add,
    bmm,
    concat_last,
    dropout,
    gather_points,
    gradient_check,
    huber_loss,
    leaky_relu,
    linear,
    mean_all,
    mul,
    pool_points,
    reduce_max,
    reduce_mean,
    relu,
    reshape,
    scale_shift,
    smooth_l1_loss,
    sub,
    sum_all,
)
from .nn import BatchNorm, Dropout, Linear, ParamStore, batch_norm
from .optim import AdamW, OneCycleSchedule, TrainControl

__all__ = [
    "Tensor", "add", "sub", "mul", "scale_shift", "linear", "bmm",
    "concat_last", "gather_points", "relu", "leaky_relu", "dropout",
    "reduce_max", "reduce_mean", "pool_points", "sum_all", "mean_all", "reshape",
    "smooth_l1_loss", "huber_loss", "gradient_check",
    "ParamStore", "Linear", "BatchNorm", "Dropout", "batch_norm",
    "AdamW", "OneCycleSchedule", "TrainControl",
]
