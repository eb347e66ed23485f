"""Training loop, Adam optimizer, and the finite-difference check harness.

The objective is the batch mean of the perceptual loss over content
images, with a fresh Gaussian noise draw per instance per step. The whole
trajectory is a deterministic function of the config: generator init,
dataset shuffling, and noise draws come from three fixed substreams of the
config seed, so identical configs give bitwise-identical parameters.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import Diverged, InputError, InvalidArgument, ShapeMismatch
from .generator import Generator, GeneratorConfig, build
from .imageio import image_to_tensor, read_ppm
from .loss import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_EXTRACTOR_SEED,
    FeatureExtractor,
    StyleTarget,
    extract_features,
    total_loss,
)
from .norms import DEFAULT_EPS
from .tensor import RngStream

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NOISE = 2


@dataclass
class TrainConfig:
    style: str
    dataset: list[str]
    seed: int = 42
    steps: int = 200
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    norm_mode: str = "instance"
    padding_mode: str = "reflect"
    base_channels: int = 8
    residual_blocks: int = 3
    noise_channels: int = 1
    eps: float = DEFAULT_EPS
    affine: bool = False
    extractor_seed: int = DEFAULT_EXTRACTOR_SEED
    extractor_weights: str | None = None
    log_every: int = 10

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgument("steps must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be >= 0 (0 = measure-only run)")
        if self.log_every < 1:
            raise InvalidArgument("log_every must be >= 1")
        if not self.dataset:
            raise InvalidArgument("dataset must name at least one content image")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            norm_mode=self.norm_mode,
            padding_mode=self.padding_mode,
            base_channels=self.base_channels,
            residual_blocks=self.residual_blocks,
            noise_channels=self.noise_channels,
            eps=self.eps,
            affine=self.affine,
        )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh parameter arrays."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeMismatch("parameter, gradient, and state names must align")
    b1, b2 = betas
    t = state.step + 1
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name!r} has shape {g.shape}, param {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        state.m[name] = m
        state.v[name] = v
    state.step = t
    return out, state


@dataclass
class RunReport:
    """Per-step losses plus enough metadata to audit a run."""

    losses: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    param_checksum: str = ""
    config_echo: list[tuple[str, str]] = field(default_factory=list)


def config_echo(config: TrainConfig) -> list[tuple[str, str]]:
    pairs = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "dataset":
            value = ",".join(value)
        pairs.append((f.name, str(value)))
    # the draws behind this run are auditable only if the algorithm travels
    pairs.append(("rng_algorithm", RngStream.ALGORITHM))
    return pairs


def serialize_report(report: RunReport) -> str:
    lines = [f"step {i} loss {v!r}" for i, v in enumerate(report.losses, 1)]
    lines.append("# config")
    lines.extend(f"# {key} {value}" for key, value in report.config_echo)
    return "\n".join(lines) + "\n"


def parameter_checksum(params: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return digest.hexdigest()


def load_image_tensor(path: str):
    try:
        img = read_ppm(path)
    except OSError as exc:
        raise InputError(f"cannot read image {path!r}: {exc}")
    return image_to_tensor(img)


def load_extractor(config: TrainConfig) -> FeatureExtractor:
    if config.extractor_weights is not None:
        return FeatureExtractor.load(config.extractor_weights)
    return FeatureExtractor.seeded(config.extractor_seed)


class _BatchSampler:
    """Seeded shuffled round-robin over dataset indices."""

    def __init__(self, count: int, batch_size: int, rng: RngStream):
        self.count = count
        self.batch_size = batch_size
        self.rng = rng
        self.order: list[int] = []

    def next_batch(self) -> list[int]:
        batch = []
        while len(batch) < self.batch_size:
            if not self.order:
                self.order = list(self.rng.permutation(self.count))
            batch.append(self.order.pop(0))
        return batch


def train(config: TrainConfig) -> tuple[Generator, RunReport]:
    """Minimize the batch-mean perceptual loss over the generator parameters."""
    started = time.perf_counter()
    phi = load_extractor(config)
    style = load_image_tensor(config.style)
    target = StyleTarget.from_style_image(phi, style, alpha=config.alpha, beta=config.beta)

    images = []
    for path in config.dataset:
        img = load_image_tensor(path)
        if images and img.shape != images[0].shape:
            raise InputError(
                f"content image {path!r} has shape {img.shape[2:]}, "
                f"expected {images[0].shape[2:]} (batching needs equal dims)"
            )
        images.append(img)
    # content-tap features are constant per image; compute them once
    content_feats = [extract_features(phi, img)[0][phi.content_tap] for img in images]

    g = build(config.generator_config(), RngStream(config.seed, STREAM_INIT))
    params = g.parameters()
    state = AdamState.for_params(params)
    sampler = _BatchSampler(len(images), config.batch_size, RngStream(config.seed, STREAM_SHUFFLE))
    noise_rng = RngStream(config.seed, STREAM_NOISE)

    nz = config.noise_channels
    report = RunReport(config_echo=config_echo(config))
    for step in range(1, config.steps + 1):
        idx = sampler.next_batch()
        x = np.concatenate([images[i] for i in idx], axis=0)
        feats_c = np.concatenate([content_feats[i] for i in idx], axis=0)
        z = noise_rng.normal((x.shape[0], nz, x.shape[2], x.shape[3])) if nz > 0 else None

        y, caches = g.forward(x, z, mode="train")
        loss, grad_y = total_loss(target, phi, None, y, content_feats=feats_c)
        if not np.isfinite(loss):
            raise Diverged(step, loss)
        report.losses.append(loss)

        grads = g.backward(grad_y, caches)
        params, state = adam_step(
            params, grads, state, config.learning_rate,
            betas=(config.beta1, config.beta2), eps=config.adam_eps,
        )
        g.set_parameters(params)

    report.wall_time = time.perf_counter() - started
    report.param_checksum = parameter_checksum(g.parameters())
    return g, report


# -- gradient checking ------------------------------------------------------

SUBJECTS = (
    "conv_zero",
    "conv_reflect",
    "relu",
    "upsample",
    "batch_norm",
    "instance_norm",
    "generator",
)


def _central_diff(f, arr, idx, h):
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2.0 * h)


def _rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _check_arrays(f, pairs, h):
    """pairs: (array, analytic gradient); returns max relative error."""
    worst = 0.0
    for arr, grad in pairs:
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            numeric = _central_diff(f, arr, idx, h)
            worst = max(worst, _rel_err(grad[idx], numeric))
    return worst


def _check_conv(padding_mode, h):
    from .layers import ConvParams, conv2d_backward, conv2d_forward

    rng = RngStream(7)
    x = rng.normal((1, 2, 4, 4))
    p = ConvParams(
        rng.normal((2, 2, 3, 3)), rng.normal((1, 1, 1, 2)).ravel(),
        stride=1, padding_mode=padding_mode, pad=1,
    )

    def f():
        y, _ = conv2d_forward(x, p)
        return 0.5 * float((y * y).sum())

    y, cache = conv2d_forward(x, p)
    gx, gw, gb = conv2d_backward(y, cache, p)
    return _check_arrays(f, [(x, gx), (p.weights, gw), (p.bias, gb)], h)


def _check_relu(h):
    from .layers import relu_backward, relu_forward

    x = RngStream(8).normal((1, 2, 4, 4))
    x[np.abs(x) < 1e-3] = 0.25  # stay clear of the kink

    def f():
        y, _ = relu_forward(x)
        return 0.5 * float((y * y).sum())

    y, cache = relu_forward(x)
    gx = relu_backward(y, cache)
    return _check_arrays(f, [(x, gx)], h)


def _check_upsample(h):
    from .layers import upsample_nearest_backward, upsample_nearest_forward

    x = RngStream(9).normal((1, 2, 3, 3))

    def f():
        y = upsample_nearest_forward(x, 2)
        return 0.5 * float((y * y).sum())

    y = upsample_nearest_forward(x, 2)
    gx = upsample_nearest_backward(y, 2)
    return _check_arrays(f, [(x, gx)], h)


def _check_norm(kind, h):
    # a random linear probe: the quadratic loss is degenerate through a
    # normalizer (output norm is nearly fixed), leaving only eps-scale
    # gradients that finite differences cannot resolve
    from .norms import (
        batch_norm_backward,
        batch_norm_forward,
        instance_norm_backward,
        instance_norm_forward,
    )

    x = RngStream(10).normal((2, 2, 3, 3))
    probe = RngStream(11).normal((2, 2, 3, 3))

    def forward():
        if kind == "batch":
            return batch_norm_forward(x, mode="train")
        return instance_norm_forward(x)

    def f():
        y, _ = forward()
        return float((y * probe).sum())

    _, cache = forward()
    backward = batch_norm_backward if kind == "batch" else instance_norm_backward
    gx = backward(probe, cache)
    return _check_arrays(f, [(x, gx)], h)


def _check_generator(h, sample_count=20):
    content = RngStream(12).uniform((1, 3, 8, 8))
    style = RngStream(13).uniform((1, 3, 8, 8))
    z = RngStream(14).normal((1, 1, 8, 8))
    phi = FeatureExtractor.seeded()
    target = StyleTarget.from_style_image(phi, style)
    g = build(GeneratorConfig(residual_blocks=1), RngStream(15))

    def f():
        y, _ = g.forward(content, z, mode="train")
        return total_loss(target, phi, content, y)[0]

    y, caches = g.forward(content, z, mode="train")
    _, grad_y = total_loss(target, phi, content, y)
    grads = g.backward(grad_y, caches)

    params = g.parameters()
    names = sorted(params)
    picker = RngStream(16)
    worst = 0.0
    for _ in range(sample_count):
        name = names[picker.integers(0, len(names))]
        arr = params[name]
        idx = np.unravel_index(picker.integers(0, arr.size), arr.shape)
        numeric = _central_diff(f, arr, idx, h)
        worst = max(worst, _rel_err(grads[name][idx], numeric))
    return worst


def gradcheck(subject: str = "all", h: float = 1e-5) -> dict[str, float]:
    """Central-difference audit of every backward pass.

    Returns {subject: max relative error}. Unknown subjects raise
    InvalidArgument; failures are the caller's judgment against their
    tolerance.
    """
    if h <= 0:
        raise InvalidArgument("h must be > 0")
    if subject != "all" and subject not in SUBJECTS:
        raise InvalidArgument(f"unknown subject {subject!r}; choose from {SUBJECTS} or 'all'")
    chosen = SUBJECTS if subject == "all" else (subject,)
    checks = {
        "conv_zero": lambda: _check_conv("zero", h),
        "conv_reflect": lambda: _check_conv("reflect", h),
        "relu": lambda: _check_relu(h),
        "upsample": lambda: _check_upsample(h),
        "batch_norm": lambda: _check_norm("batch", h),
        "instance_norm": lambda: _check_norm("instance", h),
        "generator": lambda: _check_generator(h),
    }
    return {name: checks[name]() for name in chosen}
