"""Network building blocks on top of the autodiff tensor core.

Layers are declared via ``LayerSpec`` (validated at build time) or
instantiated directly. A ``Module`` tree exposes named parameters in a
stable order, which the checkpoint format and optimizer rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BadConfig, NonFinite, ShapeMismatch
from . import tensor as T
from .tensor import Tensor

LAYER_KINDS = (
    "conv2d", "transpose_conv2d", "batch_norm", "instance_norm",
    "leaky_relu", "relu", "tanh", "sigmoid", "dropout",
    "residual_block", "concat_skip",
)

_REQUIRED = {
    "conv2d": {"in_channels", "out_channels", "kernel"},
    "transpose_conv2d": {"in_channels", "out_channels", "kernel"},
    "batch_norm": {"channels"},
    "instance_norm": {"channels"},
    "leaky_relu": set(),
    "relu": set(),
    "tanh": set(),
    "sigmoid": set(),
    "dropout": {"p"},
    "residual_block": {"channels"},
    "concat_skip": set(),
}

_OPTIONAL = {
    "conv2d": {"stride", "pad"},
    "transpose_conv2d": {"stride", "pad", "out_pad"},
    "batch_norm": {"momentum", "eps"},
    "instance_norm": {"eps"},
    "leaky_relu": {"slope"},
    "dropout": set(),
    "residual_block": {"norm"},
}


@dataclass
class LayerSpec:
    """Declarative layer description; hyperparams checked before any build."""

    kind: str
    hyperparams: dict = field(default_factory=dict)

    def validate(self) -> "LayerSpec":
        if self.kind not in LAYER_KINDS:
            raise BadConfig(f"unknown layer kind {self.kind!r}")
        required = _REQUIRED[self.kind]
        allowed = required | _OPTIONAL.get(self.kind, set())
        missing = required - self.hyperparams.keys()
        if missing:
            raise BadConfig(f"{self.kind}: missing hyperparams {sorted(missing)}")
        unknown = self.hyperparams.keys() - allowed
        if unknown:
            raise BadConfig(f"{self.kind}: unknown hyperparams {sorted(unknown)}")
        hp = self.hyperparams
        if hp.get("kernel", 1) < 1:
            raise BadConfig(f"{self.kind}: kernel must be >= 1")
        if hp.get("stride", 1) < 1:
            raise BadConfig(f"{self.kind}: stride must be >= 1")
        if not 0.0 <= hp.get("p", 0.0) < 1.0:
            raise BadConfig(f"dropout p must lie in [0, 1), got {hp.get('p')}")
        for key in ("in_channels", "out_channels", "channels"):
            if key in hp and hp[key] < 1:
                raise BadConfig(f"{self.kind}: {key} must be >= 1")
        return self


def build_layer(spec: LayerSpec, rng: np.random.Generator | None = None) -> "Module":
    """Instantiate a validated LayerSpec; weight layers draw init from rng."""
    spec.validate()
    hp = spec.hyperparams
    kind = spec.kind
    if kind == "conv2d":
        return Conv2d(hp["in_channels"], hp["out_channels"], hp["kernel"],
                      stride=hp.get("stride", 1), pad=hp.get("pad", 0), rng=rng)
    if kind == "transpose_conv2d":
        return ConvTranspose2d(hp["in_channels"], hp["out_channels"], hp["kernel"],
                               stride=hp.get("stride", 1), pad=hp.get("pad", 0),
                               out_pad=hp.get("out_pad", 0), rng=rng)
    if kind == "batch_norm":
        return BatchNorm2d(hp["channels"], momentum=hp.get("momentum", 0.1),
                           eps=hp.get("eps", 1e-5))
    if kind == "instance_norm":
        return InstanceNorm2d(hp["channels"], eps=hp.get("eps", 1e-5))
    if kind == "leaky_relu":
        return LeakyReLU(hp.get("slope", 0.2))
    if kind == "relu":
        return ReLU()
    if kind == "tanh":
        return Tanh()
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "dropout":
        return Dropout(hp["p"])
    if kind == "residual_block":
        return ResidualBlock(hp["channels"], norm=hp.get("norm", "instance"), rng=rng)
    if kind == "concat_skip":
        return ConcatSkip()
    raise BadConfig(f"unknown layer kind {kind!r}")


class Module:
    """Base class: parameter traversal, train/eval mode, call syntax."""

    training: bool = True

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, rng=None):
        return self.forward(x, rng=rng)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        buffers = getattr(self, "_buffers", None)
        if buffers:
            out.extend((f"{prefix}{k}", v) for k, v in buffers.items())
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(value, Module):
                out.extend(value.named_buffers(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_buffers(f"{key}.{i}."))
        return out

    def submodules(self) -> list["Module"]:
        subs = []
        for value in vars(self).values():
            if isinstance(value, Module):
                subs.append(value)
                subs.extend(value.submodules())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        subs.append(item)
                        subs.extend(item.submodules())
        return subs

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for sub in self.submodules():
            sub.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as a flat name -> array dict."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out[f"buffer.{name}"] = buf
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ShapeMismatch(f"checkpoint missing parameter {name!r}")
            src = arrays[name]
            if tuple(src.shape) != tuple(p.data.shape):
                raise ShapeMismatch(f"{name}: checkpoint {src.shape} vs model {p.data.shape}")
            p.data = src.astype(p.data.dtype)
        for name, buf in self.named_buffers():
            key = f"buffer.{name}"
            if key in arrays:
                buf[...] = arrays[key].astype(buf.dtype)


def _init_weight(shape, rng: np.random.Generator | None, std: float = 0.02) -> Tensor:
    if rng is None:
        raise BadConfig("weight layers need an rng for seeded initialization")
    data = rng.normal(0.0, std, size=shape).astype(T.default_dtype())
    return Tensor(data, requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None):
        self.stride = stride
        self.pad = pad
        self.weight = _init_weight((out_channels, in_channels, kernel, kernel), rng)
        self.bias = Tensor(np.zeros(out_channels, dtype=T.default_dtype()), requires_grad=True)

    def out_side(self, side: int) -> int:
        k = self.weight.shape[2]
        return T.conv_out_side(side, k, self.stride, self.pad)

    def forward(self, x, rng=None):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, out_pad=0, rng=None):
        self.stride = stride
        self.pad = pad
        self.out_pad = out_pad
        self.weight = _init_weight((in_channels, out_channels, kernel, kernel), rng)
        self.bias = Tensor(np.zeros(out_channels, dtype=T.default_dtype()), requires_grad=True)

    def out_side(self, side: int) -> int:
        k = self.weight.shape[2]
        return T.conv_transpose_out_side(side, k, self.stride, self.pad, self.out_pad)

    def forward(self, x, rng=None):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad, self.out_pad)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        dt = T.default_dtype()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dt),
            "running_var": np.ones(channels, dtype=dt),
        }

    def forward(self, x, rng=None):
        return T.batch_norm(x, self.gamma, self.beta,
                            self._buffers["running_mean"], self._buffers["running_var"],
                            training=self.training, momentum=self.momentum, eps=self.eps)


class InstanceNorm2d(Module):
    """Affine-free instance normalization (unpaired-regime norm choice)."""

    def __init__(self, channels, eps=1e-5):
        self.channels = channels
        self.eps = eps

    def forward(self, x, rng=None):
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"instance_norm: {x.shape[1]} channels, expected {self.channels}")
        return T.instance_norm(x, eps=self.eps)


class LeakyReLU(Module):
    def __init__(self, slope=0.2):
        self.slope = slope

    def forward(self, x, rng=None):
        return T.leaky_relu(x, self.slope)


class ReLU(Module):
    def forward(self, x, rng=None):
        return T.relu(x)


class Tanh(Module):
    def forward(self, x, rng=None):
        return T.tanh(x)


class Sigmoid(Module):
    def forward(self, x, rng=None):
        return T.sigmoid(x)


class Dropout(Module):
    """Inverted dropout. Stays active at inference by default: it is the
    only stochastic input the generators have, so disabling it (the
    `deterministic` switch) removes translation noise entirely."""

    def __init__(self, p=0.5):
        self.p = p
        self.enabled = True

    def forward(self, x, rng=None):
        if not self.enabled or self.p == 0.0:
            return x
        if rng is None:
            raise BadConfig("active dropout requires an rng stream")
        return T.dropout(x, self.p, rng)


class ResidualBlock(Module):
    """Two 3x3 convolutions with normalization; identity skip around them."""

    def __init__(self, channels, norm="instance", rng=None):
        self.conv1 = Conv2d(channels, channels, 3, stride=1, pad=1, rng=rng)
        self.norm1 = _make_norm(norm, channels)
        self.conv2 = Conv2d(channels, channels, 3, stride=1, pad=1, rng=rng)
        self.norm2 = _make_norm(norm, channels)

    def forward(self, x, rng=None):
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return T.add(x, h)


class ConcatSkip(Module):
    """Channel concatenation with a saved encoder activation."""

    def forward(self, x, rng=None, skip: Tensor | None = None):
        if skip is None:
            raise ShapeMismatch("concat_skip needs a saved skip tensor")
        return T.concat(x, skip, axis=1)


def _make_norm(norm: str, channels: int) -> Module:
    if norm == "batch":
        return BatchNorm2d(channels)
    if norm == "instance":
        return InstanceNorm2d(channels)
    raise BadConfig(f"unknown norm {norm!r}")


class Sequential(Module):
    """Feedforward layer chain with per-layer finiteness checks."""

    def __init__(self, layers: list[Module]):
        self.layers = list(layers)
        for layer in self.layers:
            if isinstance(layer, ConcatSkip):
                raise BadConfig("concat_skip needs two inputs; wire it in a composite net")

    def forward(self, x, rng=None):
        x.check_finite("network input")
        for i, layer in enumerate(self.layers):
            x = layer(x, rng=rng)
            if not np.all(np.isfinite(x.data)):
                raise NonFinite(f"non-finite activation after layer {i} ({type(layer).__name__})")
        return x


def build_network(specs: list[LayerSpec], rng: np.random.Generator | None = None) -> Sequential:
    """Validate and build a feedforward net from a LayerSpec sequence."""
    return Sequential([build_layer(s, rng) for s in specs])


def forward(graph: Sequential, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
    """Run a built graph on an input; retains the tape for backward()."""
    return graph.forward(x, rng=rng)
