"""Feed-forward stylization generator with a selectable normalization mode.

One fully convolutional encoder - residual - decoder skeleton:

    concat(x, z)
    -> conv s1                      (no bias when a norm follows)
    -> [norm -> ReLU -> conv s2] x2
    -> [conv -> norm -> ReLU -> conv -> norm, + skip] x residual_blocks
    -> [upsample x2 -> conv -> norm -> ReLU] x2
    -> conv to 3 channels -> sigmoid

``norm_mode`` selects none / batch / instance for every norm site at once;
nothing else changes, so two generators built from the same seed with
different norm modes have bitwise-identical conv weights. That is the
controlled-experiment contract this module exists to support.

Instance-norm generators behave identically in train and eval mode. Batch
norm uses running statistics in eval mode and therefore must see at least
one training batch first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import weights as weightfile
from .errors import FormatError, InvalidArgument, MissingForward, ShapeMismatch
from .layers import (
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    upsample_nearest_backward,
    upsample_nearest_forward,
)
from .norms import (
    DEFAULT_EPS,
    RunningStats,
    batch_norm_backward,
    batch_norm_forward,
    instance_norm_backward,
    instance_norm_forward,
)
from .tensor import RngStream, Tensor4, reduce, require_tensor4

NORM_MODES = ("none", "batch", "instance")
PAD_MODES = ("zero", "reflect")


@dataclass
class GeneratorConfig:
    norm_mode: str = "instance"
    padding_mode: str = "reflect"
    base_channels: int = 8
    residual_blocks: int = 3
    noise_channels: int = 1
    eps: float = DEFAULT_EPS
    affine: bool = False

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise InvalidArgument(f"norm_mode must be one of {NORM_MODES}")
        if self.padding_mode not in PAD_MODES:
            raise InvalidArgument(f"padding_mode must be one of {PAD_MODES}")
        if self.base_channels < 1:
            raise InvalidArgument("base_channels must be >= 1")
        if self.residual_blocks < 0:
            raise InvalidArgument("residual_blocks must be >= 0")
        if self.noise_channels < 0:
            raise InvalidArgument("noise_channels must be >= 0")


def _he_weights(rng: RngStream, c_out: int, c_in: int, k: int) -> np.ndarray:
    return rng.normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))


class ConvUnit:
    def __init__(self, name, rng, c_in, c_out, stride, padding_mode, bias=True, k=3):
        self.name = name
        w = _he_weights(rng, c_out, c_in, k)
        b = np.zeros(c_out) if bias else None
        self.params = ConvParams(w, b, stride=stride, padding_mode=padding_mode, pad=(k - 1) // 2)

    def forward(self, x, mode):
        return conv2d_forward(x, self.params)

    def backward(self, g, cache):
        gx, gw, gb = conv2d_backward(g, cache, self.params)
        grads = {f"{self.name}.w": gw}
        if gb is not None:
            grads[f"{self.name}.b"] = gb
        return gx, grads

    def parameters(self):
        out = {f"{self.name}.w": self.params.weights}
        if self.params.bias is not None:
            out[f"{self.name}.b"] = self.params.bias
        return out

    def set_parameter(self, key, value):
        if key == "w":
            self.params.weights = value
        else:
            self.params.bias = value


class NormUnit:
    """One normalization site; ``kind`` decides everything it does."""

    def __init__(self, name, kind, channels, eps, affine):
        self.name = name
        self.kind = kind
        self.eps = eps
        self.affine = affine and kind != "none"
        self.running = RunningStats(channels=channels) if kind == "batch" else None
        if self.affine:
            self.gamma = np.ones((1, channels, 1, 1))
            self.beta = np.zeros((1, channels, 1, 1))

    def forward(self, x, mode):
        if self.kind == "none":
            return x, None
        if self.kind == "batch":
            y, cache = batch_norm_forward(x, eps=self.eps, mode=mode, rs=self.running)
        else:
            y, cache = instance_norm_forward(x, eps=self.eps)
        if self.affine:
            return self.gamma * y + self.beta, (cache, y)
        return y, cache

    def backward(self, g, cache):
        if self.kind == "none":
            return g, {}
        grads = {}
        if self.affine:
            cache, normalized = cache
            grads[f"{self.name}.gamma"] = reduce(g * normalized, "TWH", "sum")
            grads[f"{self.name}.beta"] = reduce(g, "TWH", "sum")
            g = g * self.gamma
        backward = batch_norm_backward if self.kind == "batch" else instance_norm_backward
        return backward(g, cache), grads

    def parameters(self):
        if self.affine:
            return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}
        return {}

    def set_parameter(self, key, value):
        setattr(self, key, value)


class ReluUnit:
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode):
        return relu_forward(x)

    def backward(self, g, cache):
        return relu_backward(g, cache), {}

    def parameters(self):
        return {}


class UpsampleUnit:
    def __init__(self, name, factor=2):
        self.name = name
        self.factor = factor

    def forward(self, x, mode):
        return upsample_nearest_forward(x, self.factor), None

    def backward(self, g, cache):
        return upsample_nearest_backward(g, self.factor), {}

    def parameters(self):
        return {}


class SigmoidUnit:
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, g, cache):
        if cache is None:
            raise MissingForward("sigmoid backward called without a forward cache")
        return g * cache * (1.0 - cache), {}

    def parameters(self):
        return {}


class ResidualBlock:
    """conv -> norm -> ReLU -> conv -> norm, plus the identity skip."""

    def __init__(self, name, rng, channels, padding_mode, norm_mode, eps, affine, bias):
        self.name = name
        self.units = [
            ConvUnit(f"{name}.conv1", rng, channels, channels, 1, padding_mode, bias=bias),
            NormUnit(f"{name}.norm1", norm_mode, channels, eps, affine),
            ReluUnit(f"{name}.relu"),
            ConvUnit(f"{name}.conv2", rng, channels, channels, 1, padding_mode, bias=bias),
            NormUnit(f"{name}.norm2", norm_mode, channels, eps, affine),
        ]

    def forward(self, x, mode):
        h = x
        caches = []
        for unit in self.units:
            h, cache = unit.forward(h, mode)
            caches.append(cache)
        return x + h, caches

    def backward(self, g, caches):
        if caches is None:
            raise MissingForward(f"{self.name} backward called without a forward cache")
        grads = {}
        gh = g
        for unit, cache in zip(reversed(self.units), reversed(caches)):
            gh, unit_grads = unit.backward(gh, cache)
            grads.update(unit_grads)
        return g + gh, grads

    def parameters(self):
        out = {}
        for unit in self.units:
            out.update(unit.parameters())
        return out


class Generator:
    def __init__(self, config: GeneratorConfig, units: list):
        self.config = config
        self.units = units

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for unit in self.units:
            out.update(unit.parameters())
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        index = {}
        for unit in self.units:
            owner = unit
            if isinstance(unit, ResidualBlock):
                for sub in unit.units:
                    for name in sub.parameters():
                        index[name] = sub
                continue
            for name in unit.parameters():
                index[name] = owner
        for name, value in params.items():
            if name not in index:
                raise ShapeMismatch(f"unknown parameter name {name!r}")
            owner = index[name]
            current = owner.parameters()[name]
            if current.shape != value.shape:
                raise ShapeMismatch(
                    f"parameter {name!r} has shape {current.shape}, got {value.shape}"
                )
            owner.set_parameter(name.rsplit(".", 1)[1], value)

    def norm_units(self):
        for unit in self.units:
            if isinstance(unit, NormUnit):
                yield unit
            elif isinstance(unit, ResidualBlock):
                for sub in unit.units:
                    if isinstance(sub, NormUnit):
                        yield sub

    def forward(self, x: Tensor4, z: Tensor4 | None, mode: str = "train"):
        require_tensor4(x, "x")
        if mode not in ("train", "eval"):
            raise InvalidArgument(f"mode must be 'train' or 'eval', got {mode!r}")
        if x.shape[1] != 3:
            raise ShapeMismatch(f"content input must have 3 channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeMismatch(
                "spatial dims must be divisible by 4 (two stride-2 stages), "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        nz = self.config.noise_channels
        if nz > 0:
            require_tensor4(z, "z")
            if z.shape != (x.shape[0], nz, x.shape[2], x.shape[3]):
                raise ShapeMismatch(
                    f"noise must have shape {(x.shape[0], nz, x.shape[2], x.shape[3])}, "
                    f"got {z.shape}"
                )
            h = np.concatenate([x, z], axis=1)
        else:
            h = x
        caches = []
        for unit in self.units:
            h, cache = unit.forward(h, mode)
            caches.append(cache)
        return h, caches

    def backward(self, grad_out: Tensor4, caches: list) -> dict[str, np.ndarray]:
        if caches is None or len(caches) != len(self.units):
            raise MissingForward("generator backward needs the caches from forward")
        grads = {}
        g = grad_out
        for unit, cache in zip(reversed(self.units), reversed(caches)):
            g, unit_grads = unit.backward(g, cache)
            grads.update(unit_grads)
        return grads

    # -- persistence ------------------------------------------------------

    _NORM_CODE = {"none": 0.0, "batch": 1.0, "instance": 2.0}
    _PAD_CODE = {"zero": 0.0, "reflect": 1.0}

    def to_entries(self) -> dict[str, np.ndarray]:
        cfg = self.config
        entries = {
            "meta.kind": weightfile.scalar_entry(1.0),  # 1 = generator
            "meta.norm_mode": weightfile.scalar_entry(self._NORM_CODE[cfg.norm_mode]),
            "meta.padding_mode": weightfile.scalar_entry(self._PAD_CODE[cfg.padding_mode]),
            "meta.base_channels": weightfile.scalar_entry(cfg.base_channels),
            "meta.residual_blocks": weightfile.scalar_entry(cfg.residual_blocks),
            "meta.noise_channels": weightfile.scalar_entry(cfg.noise_channels),
            "meta.eps": weightfile.scalar_entry(cfg.eps),
            "meta.affine": weightfile.scalar_entry(1.0 if cfg.affine else 0.0),
        }
        for name, value in self.parameters().items():
            entries[name] = value if value.ndim == 4 else value.reshape(1, len(value), 1, 1)
        for unit in self.norm_units():
            if unit.running is not None:
                entries[f"{unit.name}.running_mu"] = unit.running.running_mu
                entries[f"{unit.name}.running_var"] = unit.running.running_var
                entries[f"{unit.name}.count"] = weightfile.scalar_entry(unit.running.sample_count)
        return entries

    @classmethod
    def from_entries(cls, entries: dict[str, np.ndarray]) -> "Generator":
        code = {v: k for k, v in cls._NORM_CODE.items()}
        pad = {v: k for k, v in cls._PAD_CODE.items()}
        try:
            config = GeneratorConfig(
                norm_mode=code[weightfile.entry_scalar(entries, "meta.norm_mode")],
                padding_mode=pad[weightfile.entry_scalar(entries, "meta.padding_mode")],
                base_channels=int(weightfile.entry_scalar(entries, "meta.base_channels")),
                residual_blocks=int(weightfile.entry_scalar(entries, "meta.residual_blocks")),
                noise_channels=int(weightfile.entry_scalar(entries, "meta.noise_channels")),
                eps=weightfile.entry_scalar(entries, "meta.eps"),
                affine=weightfile.entry_scalar(entries, "meta.affine") != 0.0,
            )
        except KeyError as exc:
            raise FormatError(f"weight file is not a generator: missing {exc}")
        g = build(config, RngStream(0))
        params = {}
        for name, current in g.parameters().items():
            if name not in entries:
                raise FormatError(f"weight file missing parameter {name!r}")
            value = entries[name]
            params[name] = value if current.ndim == 4 else value.reshape(current.shape)
        g.set_parameters(params)
        for unit in g.norm_units():
            if unit.running is not None:
                unit.running.running_mu = entries[f"{unit.name}.running_mu"]
                unit.running.running_var = entries[f"{unit.name}.running_var"]
                unit.running.sample_count = int(
                    weightfile.entry_scalar(entries, f"{unit.name}.count")
                )
        return g

    def save(self, path: str) -> None:
        weightfile.save_entries(path, self.to_entries())

    @classmethod
    def load(cls, path: str) -> "Generator":
        return cls.from_entries(weightfile.load_entries(path))


def build(config: GeneratorConfig, rng: RngStream) -> Generator:
    """Construct a generator; conv weights depend only on (seed, layer order).

    Norm layers draw nothing from the stream, so generators built from the
    same seed with different norm modes share conv weights bitwise.
    """
    cfg = config
    c1, c2, c3 = cfg.base_channels, 2 * cfg.base_channels, 4 * cfg.base_channels
    in_ch = 3 + cfg.noise_channels
    norm = cfg.norm_mode
    padm = cfg.padding_mode

    # normalization annihilates per-channel shifts, so convs that feed a
    # norm carry no bias; only the head conv (and everything in norm-free
    # generators) keeps one
    bias = norm == "none"

    def norm_unit(name, channels):
        return NormUnit(name, norm, channels, cfg.eps, cfg.affine)

    units = [
        ConvUnit("stem_conv", rng, in_ch, c1, 1, padm, bias=bias),
        norm_unit("down1_norm", c1),
        ReluUnit("down1_relu"),
        ConvUnit("down1_conv", rng, c1, c2, 2, padm, bias=bias),
        norm_unit("down2_norm", c2),
        ReluUnit("down2_relu"),
        ConvUnit("down2_conv", rng, c2, c3, 2, padm, bias=bias),
    ]
    for i in range(cfg.residual_blocks):
        units.append(ResidualBlock(f"res{i}", rng, c3, padm, norm, cfg.eps, cfg.affine, bias))
    units += [
        UpsampleUnit("up1_upsample"),
        ConvUnit("up1_conv", rng, c3, c2, 1, padm, bias=bias),
        norm_unit("up1_norm", c2),
        ReluUnit("up1_relu"),
        UpsampleUnit("up2_upsample"),
        ConvUnit("up2_conv", rng, c2, c1, 1, padm, bias=bias),
        norm_unit("up2_norm", c1),
        ReluUnit("up2_relu"),
        ConvUnit("head_conv", rng, c1, 3, 1, padm, bias=True),
        SigmoidUnit("output_sigmoid"),
    ]
    return Generator(config=cfg, units=units)
