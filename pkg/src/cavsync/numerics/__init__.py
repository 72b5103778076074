from ..errors import ParameterError, ShapeError
from .gradcheck import finite_diff_grad, relative_error
from .io import FormatError, load_cavt, read_cavt_shape, save_cavt
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    div,
    embedding,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax_row,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    reshape,
    softmax_row,
    sqrt,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
    variance,
)
