from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    narrow,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    sub,
    sum,
    take,
    tanh,
    var,
)
from .recurrent import lstm_scan
from .optim import AdamState, adam_step
from .gradcheck import grad_check, scalar_grad_check
