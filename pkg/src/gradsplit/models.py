"""Reference model family: small convnets and MLPs with an optional softmax head."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError
from .tensor import Tensor

CHECKPOINT_VERSION = 1
CONVNET5_CHANNELS = (32, 64, 128, 256)


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "mlp"  # "mlp" or "convnet5"
    input_shape: tuple[int, ...] = (32,)
    class_count: int = 10
    hidden: tuple[int, ...] = (128,)
    activation: str = "relu"
    include_softmax_head: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        if self.architecture not in ("mlp", "convnet5"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if any(w <= 0 for w in self.hidden) or any(v <= 0 for v in self.input_shape):
            raise ConfigError("widths and input extents must be positive")
        if self.architecture == "convnet5" and len(self.input_shape) != 3:
            raise ConfigError(f"convnet5 needs a (C, H, W) input shape, got {self.input_shape}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# -- layers ------------------------------------------------------------------

@dataclass(eq=False)
class Linear:
    weight: Tensor  # (in, out)
    bias: Tensor | None

    kind = "linear"

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


@dataclass(eq=False)
class Conv2d:
    weight: Tensor  # (F, C, kh, kw)
    bias: Tensor | None  # (F, 1, 1)
    stride: int = 1
    padding: int = 0

    kind = "conv"

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, self.stride, self.padding)
        return out + self.bias if self.bias is not None else out


@dataclass(eq=False)
class Activation:
    name: str

    kind = "activation"

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(x) if self.name == "relu" else T.tanh(x)


@dataclass(eq=False)
class Flatten:
    kind = "flatten"

    def __call__(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)


@dataclass(eq=False)
class SoftmaxHead:
    kind = "softmax"

    def __call__(self, x: Tensor) -> Tensor:
        return T.softmax(x)


@dataclass(eq=False)
class Model:
    config: ModelConfig
    layers: list = field(default_factory=list)
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, batch) -> Tensor:
        """Return O(a, theta) (softmax rows) or raw logits when the head is off."""
        x = T.as_tensor(batch)
        if tuple(x.shape[1:]) != self.config.input_shape:
            raise DimensionError(
                f"batch shape {x.shape} does not match model input {self.config.input_shape}"
            )
        for layer in self.layers:
            x = layer(x)
        return x

    __call__ = forward

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params.values()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count:
            raise DimensionError(f"expected {self.parameter_count} values, got {flat.size}")
        offset = 0
        for p in self.params.values():
            p.data = flat[offset:offset + p.size].reshape(p.shape).copy()
            offset += p.size


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def build(config: ModelConfig) -> Model:
    """Construct a model with weights uniform in +-1/sqrt(fan_in), seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    model = Model(config)

    def linear(name: str, fan_in: int, fan_out: int) -> Linear:
        w = _uniform(rng, (fan_in, fan_out), fan_in, f"{name}.weight")
        b = _uniform(rng, (fan_out,), fan_in, f"{name}.bias")
        model.params[w.name] = w
        model.params[b.name] = b
        return Linear(w, b)

    if config.architecture == "mlp":
        width = int(np.prod(config.input_shape))
        if len(config.input_shape) > 1:
            model.layers.append(Flatten())
        for i, h in enumerate(config.hidden):
            model.layers.append(linear(f"fc{i}", width, h))
            model.layers.append(Activation(config.activation))
            width = h
        model.layers.append(linear("head", width, config.class_count))
    else:
        c, h, w = config.input_shape
        channels = config.hidden or CONVNET5_CHANNELS
        for i, f in enumerate(channels):
            fan_in = c * 9
            kernel = _uniform(rng, (f, c, 3, 3), fan_in, f"conv{i}.weight")
            bias = _uniform(rng, (f, 1, 1), fan_in, f"conv{i}.bias")
            model.params[kernel.name] = kernel
            model.params[bias.name] = bias
            model.layers.append(Conv2d(kernel, bias, stride=2, padding=1))
            model.layers.append(Activation(config.activation))
            c, h, w = f, (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
        model.layers.append(Flatten())
        model.layers.append(linear("head", c * h * w, config.class_count))
    if config.include_softmax_head:
        model.layers.append(SoftmaxHead())
    return model


def first_layer_grad_norm(model: Model) -> float:
    """Frobenius norm of the gradient on the first weight tensor."""
    first = next(layer for layer in model.layers if hasattr(layer, "weight"))
    if first.weight.grad is None:
        raise StateError("first layer has no gradient; run backward first")
    return float(np.sqrt(np.sum(first.weight.grad ** 2)))


def save_checkpoint(model: Model, path) -> None:
    """Write an ``.npz`` with a JSON config echo and the named parameter arrays."""
    header = {"format_version": CHECKPOINT_VERSION, "config": model.config.to_dict(),
              "parameters": list(model.params)}
    arrays = {f"param:{name}": p.data for name, p in model.params.items()}
    with open(Path(path), "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> Model:
    with np.load(Path(path), allow_pickle=False) as npz:
        header = json.loads(str(npz["header"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('format_version')}")
        model = build(ModelConfig.from_dict(header["config"]))
        for name in header["parameters"]:
            model.params[name].data = np.array(npz[f"param:{name}"], dtype=np.float64)
    return model
