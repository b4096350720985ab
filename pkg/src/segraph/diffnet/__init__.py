"""Minimal reverse-mode network core used by the feature network and the GNN."""
from .layers import batchnorm2d, bin_edges, conv2d, deconv2d, dense, maxpool2d, roi_pool
from .modules import (
    BatchNorm2d,
    Conv2d,
    Deconv2d,
    Dense,
    FeatureNet,
    FeatureNetConfig,
    MLP,
    Module,
)
from .tensor import (
    Tensor,
    concat,
    exp,
    log_clamped,
    matmul,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    softmax,
    take_rows,
    total,
)

__all__ = [
    "Tensor", "concat", "exp", "log_clamped", "matmul", "relu", "reshape", "segment_softmax", "segment_sum",
    "softmax", "take_rows", "total", "batchnorm2d", "bin_edges", "conv2d", "deconv2d",
    "dense", "maxpool2d", "roi_pool", "BatchNorm2d", "Conv2d", "Deconv2d", "Dense",
    "FeatureNet", "FeatureNetConfig", "MLP", "Module",
]
