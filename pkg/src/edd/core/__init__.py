from .tensor import DEFAULT_DTYPE, BackwardError, ShapeError, Tensor, backward
from .functional import (
    LOG_EPS,
    add,
    add_n,
    concat,
    conv2d,
    cross_entropy,
    dense,
    flatten,
    matmul,
    max_pool2d,
    relu,
    scale,
    select_rows,
    softmax,
    sum_all,
)
from .params import (
    CLASS_HEAD,
    FEATURE,
    ParameterStore,
    Partition,
    WeightFileError,
    attribute_head,
    glorot_uniform,
)
from .optim import MissingGradientError, OptimizerState, sgd_step
from .gradcheck import check_gradients, numerical_grad, relative_error

__all__ = [name for name in dir() if not name.startswith("_")]
