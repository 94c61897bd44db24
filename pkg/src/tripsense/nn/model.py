"""Layer-stack model: shape validation, forward pass, binary persistence."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LeakyReLU,
    MaxPool2,
    ShapeError,
    SoftmaxOutput,
)

MAGIC = b"TSNN"
FORMAT_VERSION = 1

_CONV, _LRELU, _POOL, _DROPOUT, _FLATTEN, _DENSE, _SOFTOUT = range(1, 8)


class ModelConfigError(ValueError):
    """A layer stack is inconsistent with its input shape."""


class Model:
    """An ordered layer stack over a fixed input shape (C, H, W).

    Shapes are propagated and validated at construction; parameters are
    exclusively owned by the caller during training, while eval-mode
    forward is pure and safe to run concurrently.
    """

    def __init__(self, input_shape: tuple[int, int, int], layers: list[Layer]):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.shapes = self._propagate()

    def _propagate(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = [self.input_shape]
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as exc:
                raise ModelConfigError(
                    f"layer {i} ({type(layer).__name__}): {exc}"
                ) from exc
            shapes.append(shape)
        if not self.layers or not isinstance(self.layers[-1], SoftmaxOutput):
            raise ModelConfigError("stack must end with a SoftmaxOutput layer")
        return shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    @property
    def class_count(self) -> int:
        return self.output_shape[0]

    def init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                out.append((f"{i}.{name}", value))
        return out

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        idx, pname = name.split(".")
        layer = self.layers[int(idx)]
        getattr(layer, pname)  # fail early on unknown parameter
        setattr(layer, pname, value)

    def forward_with_caches(self, x: np.ndarray, train: bool = False,
                            rng: np.random.Generator | None = None):
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"expected (N, {self.input_shape}), got {x.shape}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, rng=rng)
            caches.append(cache)
        return x, caches

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probabilities, one row per input; rows sum to 1."""
        probs, _ = self.forward_with_caches(x, train=train, rng=rng)
        return probs

    def backward(self, dprobs: np.ndarray, caches) -> list[tuple[str, np.ndarray]]:
        grads: list[tuple[str, np.ndarray]] = []
        dout = dprobs
        for i in range(len(self.layers) - 1, -1, -1):
            dout, layer_grads = self.layers[i].backward(dout, caches[i])
            for pname, grad in layer_grads.items():
                grads.append((f"{i}.{pname}", grad))
        grads.reverse()
        return grads

    # -- persistence: header (magic, version, input shape, layer configs),
    #    then parameter tensors row-major as little-endian float64.

    def save(self, path: str | Path) -> None:
        chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
        chunks.append(struct.pack("<III", *self.input_shape))
        chunks.append(struct.pack("<I", len(self.layers)))
        for layer in self.layers:
            chunks.append(_encode_layer(layer))
        for layer in self.layers:
            for value in layer.params().values():
                chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        data = Path(path).read_bytes()
        reader = _Reader(data, path)
        if reader.take(4) != MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        version = reader.u32()
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        input_shape = (reader.u32(), reader.u32(), reader.u32())
        n_layers = reader.u32()
        layers = [_decode_layer(reader) for _ in range(n_layers)]
        model = cls(input_shape, layers)
        for layer in layers:
            for name, value in layer.params().items():
                raw = reader.take(value.size * 8)
                loaded = np.frombuffer(raw, dtype="<f8").reshape(value.shape).copy()
                setattr(layer, name, loaded)
        if reader.remaining():
            raise ValueError(f"{path}: {reader.remaining()} trailing bytes")
        return model


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _encode_layer(layer: Layer) -> bytes:
    if isinstance(layer, Conv2D):
        return struct.pack("<BIIII", _CONV, layer.in_channels, layer.out_channels,
                           layer.kh, layer.kw)
    if isinstance(layer, LeakyReLU):
        return struct.pack("<Bd", _LRELU, layer.alpha)
    if isinstance(layer, MaxPool2):
        return struct.pack("<B", _POOL)
    if isinstance(layer, Dropout):
        return struct.pack("<Bd", _DROPOUT, layer.rate)
    if isinstance(layer, Flatten):
        return struct.pack("<B", _FLATTEN)
    if isinstance(layer, SoftmaxOutput):
        return struct.pack("<BII", _SOFTOUT, layer.in_features, layer.class_count)
    if isinstance(layer, Dense):
        return struct.pack("<BII", _DENSE, layer.in_features, layer.units)
    raise TypeError(f"cannot serialize layer {type(layer).__name__}")


def _decode_layer(reader: _Reader) -> Layer:
    code = reader.take(1)[0]
    if code == _CONV:
        return Conv2D(reader.u32(), reader.u32(), reader.u32(), reader.u32())
    if code == _LRELU:
        return LeakyReLU(reader.f64())
    if code == _POOL:
        return MaxPool2()
    if code == _DROPOUT:
        return Dropout(reader.f64())
    if code == _FLATTEN:
        return Flatten()
    if code == _DENSE:
        return Dense(reader.u32(), reader.u32())
    if code == _SOFTOUT:
        return SoftmaxOutput(reader.u32(), reader.u32())
    raise ValueError(f"{reader.path}: unknown layer code {code}")


def drowsiness_net(input_side: int, class_count: int = 2) -> Model:
    """The drowsiness-detection stack: three conv blocks (64/128/128 filters,
    3x3 kernels, leaky ReLU 0.1, 2x2 max pool, dropout 0.25), then flatten,
    a 128-unit linear dense layer, leaky ReLU, dropout 0.5, and the softmax
    classification output.

    Valid convolutions and floor-halving pools shrink the spatial side as
    s -> s-2 -> s//2 per block; sides below 22 leave nothing for the third
    block and are rejected.
    """
    if class_count < 2:
        raise ModelConfigError(f"class_count must be at least 2, got {class_count}")
    side = input_side
    for block in range(3):
        if side < 3:
            raise ModelConfigError(
                f"input side {input_side}: spatial side shrinks to {side} "
                f"before conv block {block + 1}; minimum viable side is 22")
        side = (side - 2) // 2
    if side < 1:
        raise ModelConfigError(
            f"input side {input_side}: nothing left to flatten after the "
            f"third block; minimum viable side is 22")
    flat = 128 * side * side

    layers: list[Layer] = [
        Conv2D(1, 64), LeakyReLU(0.1), MaxPool2(), Dropout(0.25),
        Conv2D(64, 128), LeakyReLU(0.1), MaxPool2(), Dropout(0.25),
        Conv2D(128, 128), LeakyReLU(0.1), MaxPool2(), Dropout(0.25),
        Flatten(),
        Dense(flat, 128), LeakyReLU(0.1), Dropout(0.5),
        SoftmaxOutput(128, class_count),
    ]
    return Model((1, input_side, input_side), layers)
