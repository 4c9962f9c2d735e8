from picot.autodiff.checkpoint import CheckpointError, load_tensors, save_tensors
from picot.autodiff.optim import AdamWState, adamw_step
from picot.autodiff.tensor import (
    L2_EPS,
    NonFinite,
    NotScalar,
    ShapeMismatch,
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    concat_rows,
    dropout,
    embedding_lookup,
    exp,
    gelu,
    index,
    l2_distance,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    no_grad,
    pairwise_l2,
    pow_const,
    reshape,
    scale,
    sigmoid,
    slice_row,
    softmax,
    sqrt,
    sub,
    sum,
    transpose,
)
