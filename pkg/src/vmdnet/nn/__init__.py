"""Minimal reverse-mode tensor engine used by the forecaster."""
from .engine import (Tensor, add, as_tensor, causal_dilated_conv1d, concat, conv1d_causal_nlc,
                     dropout, embedding, gelu, getitem, linear, matmul, mean, mse_loss, mul,
                     reshape, stack, sub, transpose, tsum)
from .optim import ParamStore, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
