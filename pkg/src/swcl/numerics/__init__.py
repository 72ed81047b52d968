from .gradcheck import finite_diff_check, numeric_gradient, relative_error
from .io import (
    FormatError,
    decode_checkpoint,
    decode_tensor,
    encode_checkpoint,
    encode_tensor,
    load_checkpoint,
    read_tensor,
    save_checkpoint,
    write_tensor,
)
from .ops import (
    DegenerateInputError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    gap,
    gap_backward,
    gap_forward,
    he_uniform,
    l2_normalize,
    l2_normalize_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
    sigmoid,
    softmax_pair,
    softmax_pair_backward,
    softplus,
)
from .optim import SGD, step_decay_lr, warmup_cosine_lr
