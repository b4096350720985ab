"""Parameterized building blocks: dense/conv/deconv/batch-norm layers, MLPs and
the fully convolutional feature network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .tensor import Tensor, relu

# channel layout of the full-size feature network; scaled by FeatureNetConfig.scale
BASE_WIDTHS = (64, 64, 128, 256, 256, 256)


def _uniform_fan_in(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Owns named parameters and (optionally) non-trainable buffers."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        state = {name: p.value for name, p in self.named_parameters()}
        state.update({name: np.asarray(b) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.value.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.value.shape}")
            p.value = np.array(state[name], dtype=np.float64)
        for name in buffers:
            owner, attr = self._resolve(name)
            setattr(owner, attr, np.array(state[name], dtype=np.float64))

    def _resolve(self, dotted):
        *path, attr = dotted.split(".")
        owner = self
        for part in path:
            owner = owner[int(part)] if isinstance(owner, list) else getattr(owner, part)
        return owner, attr


def parameter(value, name):
    return Tensor(value, requires_grad=True, name=name)


class Dense(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = parameter(_uniform_fan_in(rng, (n_in, n_out), n_in), "weight")
        self.bias = parameter(np.zeros(n_out), "bias")

    def __call__(self, x):
        return layers.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = parameter(_uniform_fan_in(rng, (n_out, n_in, 3, 3), 9 * n_in), "weight")
        self.bias = parameter(np.zeros(n_out), "bias")

    def __call__(self, x):
        return layers.conv2d(x, self.weight, self.bias)


class Deconv2d(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = parameter(_uniform_fan_in(rng, (n_in, n_out, 2, 2), n_in), "weight")
        self.bias = parameter(np.zeros(n_out), "bias")

    def __call__(self, x):
        return layers.deconv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Spatial batch norm.  Training uses the statistics of the current map and
    folds them into running averages; eval uses the running averages."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1):
        self.gamma = parameter(np.ones(channels), "gamma")
        self.beta = parameter(np.zeros(channels), "beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum

    def __call__(self, x):
        if not self.training:
            out, _, _ = layers.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var)
            return out
        out, mean, var = layers.batchnorm2d(x, self.gamma, self.beta)
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mean
        self.running_var = (1 - m) * self.running_var + m * var
        return out


class MLP(Module):
    """Dense layers with ReLU between them.

    ``sizes`` lists every width including input and output, so the default
    one-hidden-layer perceptron is ``(n_in, hidden, n_out)``.
    """

    def __init__(self, sizes, rng, out_relu=False):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.out_relu = out_relu

    @property
    def n_in(self):
        return self.layers[0].weight.shape[0]

    def __call__(self, x):
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1 or self.out_relu:
                x = relu(x)
        return x


@dataclass
class FeatureNetConfig:
    scale: float = 0.125
    in_channels: int = 3
    roi_bins: tuple = (3, 3)
    hidden_dim: int = 32

    @property
    def widths(self):
        return tuple(max(1, int(round(w * self.scale))) for w in BASE_WIDTHS)

    @property
    def out_channels(self):
        return self.widths[-1]

    @property
    def roi_dim(self):
        return self.out_channels * self.roi_bins[0] * self.roi_bins[1]


class FeatureNet(Module):
    """C+C+M+C+M+C+D+D, batch norm and ReLU after every C and D.

    Output has the input's spatial size; H and W must be multiples of 4.
    """

    def __init__(self, cfg: FeatureNetConfig, rng):
        w = cfg.widths
        self.cfg = cfg
        self.conv1, self.bn1 = Conv2d(cfg.in_channels, w[0], rng), BatchNorm2d(w[0])
        self.conv2, self.bn2 = Conv2d(w[0], w[1], rng), BatchNorm2d(w[1])
        self.conv3, self.bn3 = Conv2d(w[1], w[2], rng), BatchNorm2d(w[2])
        self.conv4, self.bn4 = Conv2d(w[2], w[3], rng), BatchNorm2d(w[3])
        self.deconv1, self.bn5 = Deconv2d(w[3], w[4], rng), BatchNorm2d(w[4])
        self.deconv2, self.bn6 = Deconv2d(w[4], w[5], rng), BatchNorm2d(w[5])

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        _, H, W = x.shape
        if H % 4 or W % 4:
            raise ValueError(f"feature net input must have H, W divisible by 4, got {H}x{W}")
        x = relu(self.bn1(self.conv1(x)))
        x = relu(self.bn2(self.conv2(x)))
        x = layers.maxpool2d(x)
        x = relu(self.bn3(self.conv3(x)))
        x = layers.maxpool2d(x)
        x = relu(self.bn4(self.conv4(x)))
        x = relu(self.bn5(self.deconv1(x)))
        x = relu(self.bn6(self.deconv2(x)))
        return x
