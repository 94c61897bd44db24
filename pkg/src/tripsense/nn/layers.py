"""Network layers with explicit forward/backward passes.

Conventions:
  - Convolutional data is (N, C, H, W); dense data is (N, D). float64.
  - forward(x, train, rng) returns (out, cache); backward(dout, cache)
    returns (dx, param_grads) where param_grads maps parameter name to
    its gradient. Layers hold parameters but no activation state, so
    eval-mode forward is a pure function.
  - Convolutions are valid (no padding), stride 1. Pooling is 2x2
    windows with stride 2; odd trailing rows/columns are dropped.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""


class Layer:
    """Base layer; subclasses override the shape and compute hooks."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None):
        raise NotImplementedError

    def backward(self, dout: np.ndarray, cache):
        raise NotImplementedError


def _glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2D(Layer):
    """Valid 2D convolution (cross-correlation), stride 1.

    W has shape (out_channels, in_channels, kh, kw); output spatial sides
    shrink by kernel-1.
    """

    def __init__(self, in_channels: int, out_channels: int, kh: int = 3, kw: int = 3):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh = kh
        self.kw = kw
        self.W = np.zeros((out_channels, in_channels, kh, kw))
        self.b = np.zeros(out_channels)

    def params(self):
        return {"W": self.W, "b": self.b}

    def init_params(self, rng):
        fan_in = self.in_channels * self.kh * self.kw
        fan_out = self.out_channels * self.kh * self.kw
        self.W = _glorot_uniform(rng, self.W.shape, fan_in, fan_out)
        self.b = np.zeros(self.out_channels)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        if h < self.kh or w < self.kw:
            raise ShapeError(f"input {h}x{w} smaller than kernel {self.kh}x{self.kw}")
        return (self.out_channels, h - self.kh + 1, w - self.kw + 1)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        # im2col: every kernel-sized patch becomes one row, so the whole
        # convolution is a single matmul against the flattened kernels
        windows = np.lib.stride_tricks.sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * self.kh * self.kw)
        wmat = self.W.reshape(self.out_channels, -1)
        out = (cols @ wmat.T + self.b).reshape(n, ho, wo, self.out_channels)
        return np.moveaxis(out, 3, 1), (x.shape, cols)

    def backward(self, dout, cache):
        (n, c, h, w), cols = cache
        ho, wo = dout.shape[2], dout.shape[3]
        dout_nhwo = np.ascontiguousarray(np.moveaxis(dout, 1, 3))  # (N,Ho,Wo,O)
        dflat = dout_nhwo.reshape(-1, self.out_channels)
        dW = (dflat.T @ cols).reshape(self.W.shape)
        dcols = (dflat @ self.W.reshape(self.out_channels, -1)).reshape(
            n, ho, wo, c, self.kh, self.kw)
        dx = np.zeros((n, c, h, w))
        # col2im: overlapping patches scatter-add back onto the input grid
        for ky in range(self.kh):
            for kx in range(self.kw):
                dx[:, :, ky:ky + ho, kx:kx + wo] += np.moveaxis(dcols[..., ky, kx], 3, 1)
        db = dout.sum(axis=(0, 2, 3))
        return dx, {"W": dW, "b": db}


class LeakyReLU(Layer):
    def __init__(self, alpha: float):
        if alpha <= 0.0:
            raise ValueError("alpha must be > 0")
        self.alpha = alpha

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        return np.where(x >= 0.0, x, self.alpha * x), x

    def backward(self, dout, cache):
        x = cache
        return np.where(x >= 0.0, dout, self.alpha * dout), {}


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; gradient flows only to the argmax
    position of each window (first occurrence on exact ties)."""

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"input {h}x{w} smaller than 2x2 pooling window")
        return (c, h // 2, w // 2)

    @staticmethod
    def _windows(x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        cropped = x[:, :, : ho * 2, : wo * 2]
        return cropped.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, ho, wo, 4
        )

    def forward(self, x, train=False, rng=None):
        win = self._windows(x)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, dout, cache):
        in_shape, idx = cache
        n, c, h, w = in_shape
        ho, wo = h // 2, w // 2
        dwin = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros(in_shape)
        dx[:, :, : ho * 2, : wo * 2] = (
            dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
                n, c, ho * 2, wo * 2
            )
        )
        return dx, {}


class Dropout(Layer):
    """Inverted dropout: active only in train mode, so eval needs no rescaling."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("rate must be in [0, 1)")
        self.rate = rate

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if not train:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dout, cache):
        mask = cache
        return (dout if mask is None else dout * mask), {}


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}


class Dense(Layer):
    """Fully connected layer with linear activation."""

    def __init__(self, in_features: int, units: int):
        self.in_features = in_features
        self.units = units
        self.W = np.zeros((in_features, units))
        self.b = np.zeros(units)

    def params(self):
        return {"W": self.W, "b": self.b}

    def init_params(self, rng):
        self.W = _glorot_uniform(rng, self.W.shape, self.in_features, self.units)
        self.b = np.zeros(self.units)

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"expected ({self.in_features},), got {in_shape}")
        return (self.units,)

    def forward(self, x, train=False, rng=None):
        return x @ self.W + self.b, x

    def backward(self, dout, cache):
        x = cache
        return dout @ self.W.T, {"W": x.T @ dout, "b": dout.sum(axis=0)}


class SoftmaxOutput(Layer):
    """Terminal classification layer: linear projection to class scores
    followed by a numerically stable softmax."""

    def __init__(self, in_features: int, class_count: int):
        self.in_features = in_features
        self.class_count = class_count
        self.W = np.zeros((in_features, class_count))
        self.b = np.zeros(class_count)

    def params(self):
        return {"W": self.W, "b": self.b}

    def init_params(self, rng):
        self.W = _glorot_uniform(rng, self.W.shape, self.in_features, self.class_count)
        self.b = np.zeros(self.class_count)

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"expected ({self.in_features},), got {in_shape}")
        return (self.class_count,)

    def forward(self, x, train=False, rng=None):
        z = x @ self.W + self.b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, (x, p)

    def backward(self, dout, cache):
        x, p = cache
        # Softmax Jacobian applied to the upstream gradient, then the linear part.
        dz = p * (dout - (dout * p).sum(axis=1, keepdims=True))
        dx = dz @ self.W.T
        return dx, {"W": x.T @ dz, "b": dz.sum(axis=0)}
