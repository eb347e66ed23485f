"""Perceptual loss: frozen feature extractor, Gram statistics, weighted sum.

Style statistics are Gram matrices of shallow feature maps, averaged over
spatial sites so layout is discarded; content statistics keep the deeper
feature map as-is so layout is preserved. The loss is

    alpha * msd(content-tap features)  +  beta * mean over taps of
    msd(Gram(output tap), Gram target)

with msd = mean squared difference and per-instance style terms averaged
over the batch. Gradients flow back through the Gram map and the frozen
extractor to the image.

The extractor stands in for a classification-pretrained network, which is
far out of desk-scale scope: by default it is a frozen stack of seeded
random conv -> ReLU blocks (random filters still expose usable texture
statistics). Externally trained weights can be loaded from a weight file
instead; see :meth:`FeatureExtractor.load`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import weights as weightfile
from .errors import FormatError, InvalidShape, MissingForward, ShapeMismatch
from .layers import ConvParams, conv2d_backward, conv2d_forward, relu_backward, relu_forward
from .tensor import RngStream, Tensor4, require_tensor4

DEFAULT_EXTRACTOR_SEED = 1001
DEFAULT_CHANNELS = (3, 8, 16, 16, 16)
DEFAULT_STRIDES = (2, 2, 1, 1)
DEFAULT_STYLE_TAPS = (1, 2, 3)
DEFAULT_CONTENT_TAP = 3
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 10.0

MIN_INPUT_SIDE = 8


def he_std(c_in: int, kernel: int) -> float:
    return float(np.sqrt(2.0 / (c_in * kernel * kernel)))


@dataclass
class FeatureExtractor:
    """Frozen conv -> ReLU stack with named tap points (1-indexed blocks)."""

    blocks: list[ConvParams]
    style_taps: tuple[int, ...] = DEFAULT_STYLE_TAPS
    content_tap: int = DEFAULT_CONTENT_TAP

    def __post_init__(self):
        last = max(self.style_taps + (self.content_tap,))
        if last > len(self.blocks) or min(self.style_taps) < 1 or self.content_tap < 1:
            raise InvalidShape("tap indices must address existing blocks")

    @classmethod
    def seeded(
        cls,
        seed: int = DEFAULT_EXTRACTOR_SEED,
        channels: tuple[int, ...] = DEFAULT_CHANNELS,
        strides: tuple[int, ...] = DEFAULT_STRIDES,
        kernel: int = 3,
    ) -> "FeatureExtractor":
        """Build the frozen random extractor; identical seed, identical filters."""
        rng = RngStream(seed)
        blocks = []
        for c_in, c_out, stride in zip(channels[:-1], channels[1:], strides):
            w = rng.normal((c_out, c_in, kernel, kernel)) * he_std(c_in, kernel)
            blocks.append(
                ConvParams(w, None, stride=stride, padding_mode="reflect", pad=(kernel - 1) // 2)
            )
        return cls(blocks=blocks)

    @property
    def taps(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.style_taps) | {self.content_tap}))

    def to_entries(self) -> dict[str, np.ndarray]:
        entries = {
            "meta.kind": weightfile.scalar_entry(2.0),  # 2 = feature extractor
            "meta.blocks": weightfile.scalar_entry(len(self.blocks)),
            "meta.content_tap": weightfile.scalar_entry(self.content_tap),
        }
        entries["meta.style_taps"] = np.array(self.style_taps, dtype=np.float64).reshape(
            1, 1, 1, len(self.style_taps)
        )
        for i, blk in enumerate(self.blocks, start=1):
            entries[f"block{i}.w"] = blk.weights
            entries[f"block{i}.stride"] = weightfile.scalar_entry(blk.stride)
        return entries

    @classmethod
    def from_entries(cls, entries: dict[str, np.ndarray]) -> "FeatureExtractor":
        n = int(weightfile.entry_scalar(entries, "meta.blocks"))
        blocks = []
        for i in range(1, n + 1):
            try:
                w = entries[f"block{i}.w"]
            except KeyError:
                raise FormatError(f"missing extractor entry block{i}.w")
            stride = int(weightfile.entry_scalar(entries, f"block{i}.stride"))
            k = w.shape[2]
            blocks.append(
                ConvParams(w, None, stride=stride, padding_mode="reflect", pad=(k - 1) // 2)
            )
        style_taps = tuple(int(v) for v in entries["meta.style_taps"].ravel())
        content_tap = int(weightfile.entry_scalar(entries, "meta.content_tap"))
        return cls(blocks=blocks, style_taps=style_taps, content_tap=content_tap)

    def save(self, path: str) -> None:
        weightfile.save_entries(path, self.to_entries())

    @classmethod
    def load(cls, path: str) -> "FeatureExtractor":
        return cls.from_entries(weightfile.load_entries(path))


def extract_features(
    phi: FeatureExtractor, x: Tensor4
) -> tuple[dict[int, Tensor4], list]:
    """Run the frozen stack; returns {tap index: feature map} plus caches."""
    require_tensor4(x, "x")
    if x.shape[1] != phi.blocks[0].weights.shape[1]:
        raise InvalidShape(
            f"input has {x.shape[1]} channels, extractor expects {phi.blocks[0].weights.shape[1]}"
        )
    if x.shape[2] < MIN_INPUT_SIDE or x.shape[3] < MIN_INPUT_SIDE:
        raise InvalidShape(
            f"input spatial dims must be >= {MIN_INPUT_SIDE}, got {x.shape[2]}x{x.shape[3]}"
        )
    feats: dict[int, Tensor4] = {}
    caches = []
    h = x
    for i, blk in enumerate(phi.blocks, start=1):
        h, conv_cache = conv2d_forward(h, blk)
        h, relu_cache = relu_forward(h)
        caches.append((conv_cache, relu_cache))
        if i in phi.taps:
            feats[i] = h
    return feats, caches


def features_backward(
    phi: FeatureExtractor, caches: list, tap_grads: dict[int, Tensor4]
) -> Tensor4:
    """Backpropagate tap gradients through the frozen stack to the input."""
    if not caches or len(caches) != len(phi.blocks):
        raise MissingForward("features_backward needs the caches from extract_features")
    grad = None
    for i in range(len(phi.blocks), 0, -1):
        conv_cache, relu_cache = caches[i - 1]
        g_tap = tap_grads.get(i)
        if grad is None:
            grad = np.zeros(relu_cache.x.shape) if g_tap is None else g_tap
        elif g_tap is not None:
            grad = grad + g_tap
        grad = relu_backward(grad, relu_cache)
        grad, _, _ = conv2d_backward(grad, conv_cache, phi.blocks[i - 1])
    return grad


def gram(feature_map: Tensor4) -> np.ndarray:
    """Spatially averaged channel products: G_ij = (1/WH) sum_s F_is F_js.

    Products are sorted before the sequential sum, which makes the result
    bitwise invariant under any spatial permutation of the sites and
    bitwise symmetric.
    """
    require_tensor4(feature_map, "feature_map")
    if feature_map.shape[0] != 1:
        raise InvalidShape(
            f"gram expects a single-instance map, got T={feature_map.shape[0]}"
        )
    _, c, w, h = feature_map.shape
    flat = feature_map.reshape(c, w * h)
    products = flat[:, None, :] * flat[None, :, :]
    products = np.sort(products, axis=2)
    if products.shape[2] == 1:
        totals = products[:, :, 0]
    else:
        totals = np.add.accumulate(products, axis=2)[:, :, -1]
    return totals / (w * h)


def gram_backward(grad_g: np.ndarray, feature_map: Tensor4) -> Tensor4:
    """d/dF of sum_ij grad_g_ij * G_ij for a single-instance map."""
    _, c, w, h = feature_map.shape
    flat = feature_map.reshape(c, w * h)
    gf = (grad_g + grad_g.T) @ flat / (w * h)
    return gf.reshape(feature_map.shape)


@dataclass
class StyleTarget:
    """Precomputed Gram targets plus the two loss weights."""

    gram_targets: dict[int, np.ndarray]
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    @classmethod
    def from_style_image(
        cls,
        phi: FeatureExtractor,
        style: Tensor4,
        alpha: float = DEFAULT_ALPHA,
        beta: float = DEFAULT_BETA,
    ) -> "StyleTarget":
        require_tensor4(style, "style")
        if style.shape[0] != 1:
            raise InvalidShape("style image must be a single instance")
        feats, _ = extract_features(phi, style)
        targets = {tap: gram(feats[tap]) for tap in phi.style_taps}
        return cls(gram_targets=targets, alpha=alpha, beta=beta)


def total_loss(
    target: StyleTarget,
    phi: FeatureExtractor,
    content: Tensor4,
    output: Tensor4,
    content_feats: Tensor4 | None = None,
) -> tuple[float, Tensor4]:
    """Weighted content + style loss and its exact gradient w.r.t. ``output``.

    ``content_feats`` may carry the precomputed content-tap features of
    ``content`` (they are deterministic, so callers in a training loop can
    compute them once per image); passing them changes nothing numerically.
    """
    require_tensor4(output, "output")
    if content_feats is None:
        require_tensor4(content, "content")
        if content.shape != output.shape:
            raise ShapeMismatch(
                f"content shape {content.shape} != output shape {output.shape}"
            )
        feats_c, _ = extract_features(phi, content)
        content_feats = feats_c[phi.content_tap]

    feats_out, caches = extract_features(phi, output)
    t_count = output.shape[0]
    tap_grads: dict[int, Tensor4] = {}

    f_out = feats_out[phi.content_tap]
    if f_out.shape != content_feats.shape:
        raise ShapeMismatch(
            f"content feature shape {content_feats.shape} != output feature shape {f_out.shape}"
        )
    diff = f_out - content_feats
    content_term = float(np.mean(diff * diff))
    tap_grads[phi.content_tap] = target.alpha * 2.0 * diff / diff.size

    n_taps = len(phi.style_taps)
    style_term = 0.0
    for tap in phi.style_taps:
        f = feats_out[tap]
        g_tap = np.zeros_like(f)
        for t in range(t_count):
            g_mat = gram(f[t : t + 1])
            g_diff = g_mat - target.gram_targets[tap]
            style_term += float(np.mean(g_diff * g_diff)) / (n_taps * t_count)
            dg = target.beta * 2.0 * g_diff / (g_diff.size * n_taps * t_count)
            g_tap[t : t + 1] = gram_backward(dg, f[t : t + 1])
        tap_grads[tap] = tap_grads.get(tap, 0.0) + g_tap

    loss = target.alpha * content_term + target.beta * style_term
    grad = features_backward(phi, caches, tap_grads)
    return loss, grad
