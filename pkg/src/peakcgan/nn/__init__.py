from .checkpoint import load_arrays, load_module, save_arrays, save_module
from .gradcheck import grad_check, jitter_params, numeric_grad, relative_error
from .layers import (
    ConfigError,
    Conv1d,
    Dropout,
    Encoder,
    EncoderBlock,
    Linear,
    Module,
    MultiHeadAttention,
    Param,
    ReLU,
    ShapeError,
    Sigmoid,
    conv1d_backward,
    conv1d_forward,
    dropout,
    linear_backward,
    linear_forward,
    multi_head_attention,
    relu,
    sigmoid,
    sinusoidal_positions,
    softmax,
)
from .optim import Adam, OptimizerState, adam_step
