"""Frequency-domain 3D vessel segmentation: numpy autodiff, hand-rolled FFTs,
spectral filter blocks, a hierarchical segmentation network, and the tooling
(phantoms, training, inference, benchmarks) around them."""

from .errors import FsegError
from .fft import Spectrum3D, fft1d, fft3d, ifft3d, irfft3d, rfft3d
from .losses import ConfusionCounts, combined_loss, dice, iou
from .network import FsegConfig, FsegModel, build, flops_estimate, param_count, preset_config
from .phantom import AugmentConfig, PhantomSpec, Volume, augment, generate_phantom, split
from .spectral import (
    FourierBlockParams,
    FreqCropSpec,
    PadSpec,
    circular_vs_linear_demo,
    crop_freq,
    embed_freq,
    fourier_fuse,
    global_filter,
)
from .tensor import Parameter, Tensor
from .train import AdamW, SlidingWindowSpec, TrainConfig, sliding_window_infer, train

__version__ = "0.1.0"
