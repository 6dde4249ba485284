from . import kernels
from .optim import Adam
from .gradcheck import analytic_grad, gradient_check, numerical_grad
from .tensor import (
    LEAKY_SLOPE, NonFiniteError, ShapeError, Tensor, add, clamp, concat, conv2d, edge_aggregate, edge_dot,
    forward_op, gather, getitem,
    glorot, inner, leaky_relu, log, log_sigmoid, matmul, max_pool2d, mean, mul, relu, reshape, scale,
    segment_softmax, segment_sum, sigmoid, softmax, stack, sub, sumsq, tanh, transpose, tsum, upsample2d,
)

__all__ = [
    "Adam", "LEAKY_SLOPE", "NonFiniteError", "ShapeError", "Tensor", "add", "analytic_grad", "clamp", "concat", "conv2d",
    "edge_aggregate", "edge_dot",
    "forward_op", "gather", "getitem", "glorot", "gradient_check", "inner", "kernels", "leaky_relu", "log",
    "log_sigmoid", "matmul", "max_pool2d", "mean", "mul", "numerical_grad", "relu", "reshape", "scale",
    "segment_softmax", "segment_sum", "sigmoid", "softmax", "stack", "sub", "sumsq", "tanh", "transpose", "tsum",
    "upsample2d",
]
