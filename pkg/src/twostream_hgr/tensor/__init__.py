from .checkpoint import load_checkpoint, save_checkpoint
from .core import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    cross_entropy,
    exp,
    flip,
    getitem,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    softmax_rows,
    sub,
    transpose,
    tsum,
)
from .gradcheck import finite_diff_check
from .layers import BatchNormState, batch_norm, dropout, glorot_uniform, temporal_conv
from .optim import AdamState, adam_step
