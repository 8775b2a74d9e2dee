from .gradcheck import gradcheck, numeric_grad
from .layers import (
    MLP,
    Conv1d,
    CrossLayer,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    sinusoidal_positions,
)
from .optim import (
    AdamW,
    CheckpointError,
    NonFiniteGradientError,
    cosine_lr,
    load_into,
    read_checkpoint,
    restore_optimizer,
    save_checkpoint,
)
from .tensor import (
    ShapeError,
    Tensor,
    add,
    attention,
    concat,
    conv1d,
    gelu,
    getitem,
    layer_norm,
    matmul,
    mul,
    no_grad,
    record_kinks,
    parameter,
    relu,
    reshape,
    softmax,
    stack,
    tanh,
    transpose,
    wrapped_mse,
)
