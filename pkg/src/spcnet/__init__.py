"""SPCNet: stacked dilated hourglasses with selective multi-level fusion for 2-D pose estimation."""
from .config import (
    CodecConfig,
    ConfigError,
    DataError,
    OptimizerSchedule,
    PCKConfig,
    SPCNetConfig,
    load_config,
)
from .dhm import DilatedHourglass, dilated_conv2d, effective_extent
from .evaluation import EvalReport, pck_curve, pck_score
from .heatmap_codec import KeypointSet, decode_heatmaps, encode_heatmaps
from .model import SPCNet, build_model, compute_loss
from .trainer import Trainer, fit, load_checkpoint, lr_at_epoch, save_checkpoint

__version__ = "0.1.0"
