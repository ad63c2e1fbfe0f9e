"""Linearise PReLU blocks during training, then fuse them into single linear layers."""

from .arch import ArchDescriptor, collapse_accounting, describe, mlp_share
from .bound import BoundReport, bound_constant, estimate_x_delta, sigma_max, verify_bound
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .collapse import (CollapseConfig, CollapseReport, ConvGainQuery, GainQuery, Uncollapsible,
                       collapse_block, collapse_model, conv_gain, count_macs, count_params,
                       dense_gain, fold_block, fuse_conv)
from .data import Dataset, gen_blobs, gen_regression_1d, gen_two_spirals, load_idx, parse_idx
from .errors import (ConfigError, ContractError, DimensionError, DivergenceError, FormatError,
                     InsufficientDataError, LayerCollapseError, NumericError,
                     UnknownArchitectureError, UnsupportedConfigurationError)
from .losses import LC_FINETUNE, LC_SCRATCH, RegConfig, composite_loss, reg_loss
from .nn import (BatchNormLayer, CollapsibleBlock, LinearLayer, ModelGraph, PReLULayer,
                 block_forward, init_model, model_forward)
from .tensor import Tensor, no_grad
from .train import TrainConfig, demo_fig1, sensitivity_sweep, sequential_collapse, train

__version__ = "0.1.0"
