"""A tiny, fully specified convolutional detector with exact gradients.

The network is deliberately small enough that every quantity it produces can
be checked by hand or by brute force:

- conv1: 3 -> K kernels, 5x5, stride 2, edge padding, ReLU
- conv2: K -> K kernels, 3x3, stride 2, edge padding, ReLU
  (its output is the feature stack: N = K maps of size H/4 x W/4)
- head:  1x1 convolution K -> (C + 1); channels 0..C-1 are per-cell class
  logits read through a sigmoid, the last channel is unused padding
- boxes: one fixed anchor per feature cell, centered on the cell center,
  side length 4 * cell stride = 16 input pixels (no box regression)

Because the head is 1x1, the gradient of any cell's class logit with respect
to the feature stack is closed-form: head weight w[class, i] at that cell in
map i, zero everywhere else.

Two weight presets exist. ``seeded_random`` draws all weights uniformly from
[-0.1, 0.1] out of a documented PRNG (numpy PCG64 via ``default_rng(seed)``,
draw order conv1.weight, conv1.bias, conv2.weight, conv2.bias, head.weight,
head.bias). ``brightness`` configures both convolutions as local averaging
(every kernel entry 1/(fan_in * kernel_area), zero bias) and the head's
class-0 weights to gain/K with bias ``bias``, which makes the class-0 logit
of each cell exactly ``gain * (mean brightness of its receptive field) +
bias``; the remaining class channels are pinned far below the detection
threshold.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .detectors import (
    CAP_DETECT,
    CAP_FEATURES,
    CAP_GRAD,
    BBox,
    Detection,
    DetectorAdapter,
)
from .errors import InvalidDimensionError, InvalidParameterError
from .tensor_ops import check_image, read_f32t, write_f32t

CELL_STRIDE = 4
ANCHOR_SIDE = 4 * CELL_STRIDE
INERT_CLASS_BIAS = -20.0  # non-primary classes of the brightness preset
WEIGHTS_MANIFEST = "weights.json"


@dataclass
class MicroDetConfig:
    """Weights and geometry of the micro detector."""

    input_hw: tuple[int, int]
    k: int = 8
    n_classes: int = 2
    conv1_w: np.ndarray = field(repr=False, default=None)
    conv1_b: np.ndarray = field(repr=False, default=None)
    conv2_w: np.ndarray = field(repr=False, default=None)
    conv2_b: np.ndarray = field(repr=False, default=None)
    head_w: np.ndarray = field(repr=False, default=None)
    head_b: np.ndarray = field(repr=False, default=None)
    label: str = "custom"

    def __post_init__(self):
        h, w = self.input_hw
        if h % 4 or w % 4 or h < 4 or w < 4:
            raise InvalidParameterError(f"input size must be divisible by 4, got {h}x{w}")
        if self.k < 1 or self.n_classes < 1:
            raise InvalidParameterError("k and n_classes must be >= 1")
        shapes = {
            "conv1_w": (self.k, 3, 5, 5),
            "conv1_b": (self.k,),
            "conv2_w": (self.k, self.k, 3, 3),
            "conv2_b": (self.k,),
            "head_w": (self.n_classes + 1, self.k),
            "head_b": (self.n_classes + 1,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr is None:
                raise InvalidParameterError(f"missing weight array {name}")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise InvalidDimensionError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise InvalidParameterError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def feature_hw(self) -> tuple[int, int]:
        return (self.input_hw[0] // 4, self.input_hw[1] // 4)


def seeded_random(input_hw: tuple[int, int], seed: int, k: int = 8, n_classes: int = 2) -> MicroDetConfig:
    """All weights uniform in [-0.1, 0.1] from ``numpy.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)

    def draw(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return MicroDetConfig(
        input_hw=input_hw,
        k=k,
        n_classes=n_classes,
        conv1_w=draw(k, 3, 5, 5),
        conv1_b=draw(k),
        conv2_w=draw(k, k, 3, 3),
        conv2_b=draw(k),
        head_w=draw(n_classes + 1, k),
        head_b=draw(n_classes + 1),
        label=f"seeded:{seed}",
    )


# (window size, dy, dx) of the sub-window each brightness feature averages,
# cycled over k. Distinct windows keep the k feature maps distinguishable;
# identical maps would be useless to consumers that weight maps against each
# other. Every window is normalized, so any constant image passes through
# both stages unchanged and the closed-form scores below stay exact.
_BRIGHTNESS_WINDOWS = (
    (5, 0, 0), (3, 0, 0), (3, -1, -1), (3, -1, 1), (3, 1, -1), (3, 1, 1),
    (1, 0, 0), (3, 0, 1), (3, 0, -1), (3, 1, 0), (3, -1, 0),
)


def brightness(
    input_hw: tuple[int, int],
    gain: float = 8.0,
    bias: float = -4.0,
    k: int = 8,
    n_classes: int = 2,
) -> MicroDetConfig:
    """Averaging preset: class-0 logit = gain * mean local brightness + bias.

    Each of the k feature maps is a local brightness average over its own
    sub-window of the first-stage support, followed by a per-map 3x3 average
    in the second stage. On a constant image of level v every feature equals
    v exactly, so the class-0 score is sigmoid(gain * v + bias) in closed
    form, and raising any pixel can only raise every class-0 score.
    """
    if gain <= 0:
        raise InvalidParameterError(f"gain must be > 0, got {gain}")
    conv1_w = np.zeros((k, 3, 5, 5))
    for i in range(k):
        size, dy, dx = _BRIGHTNESS_WINDOWS[i % len(_BRIGHTNESS_WINDOWS)]
        y0 = 2 + dy - size // 2
        x0 = 2 + dx - size // 2
        conv1_w[i, :, y0 : y0 + size, x0 : x0 + size] = 1.0 / (3 * size * size)
    conv2_w = np.zeros((k, k, 3, 3))
    for i in range(k):
        conv2_w[i, i] = 1.0 / 9.0
    head_w = np.zeros((n_classes + 1, k))
    head_w[0, :] = gain / k
    head_b = np.zeros(n_classes + 1)
    head_b[0] = bias
    head_b[1:n_classes] = INERT_CLASS_BIAS
    return MicroDetConfig(
        input_hw=input_hw,
        k=k,
        n_classes=n_classes,
        conv1_w=conv1_w,
        conv1_b=np.zeros(k),
        conv2_w=conv2_w,
        conv2_b=np.zeros(k),
        head_w=head_w,
        head_b=head_b,
        label=f"brightness:gain={gain},bias={bias}",
    )


def _conv_stride2(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    """Stride-2 cross-correlation with edge-replicated padding."""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    win = sliding_window_view(xp, (w.shape[2], w.shape[3]), axis=(1, 2))[:, ::2, ::2]
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    return out + b[:, None, None]


def _feature_stack(cfg: MicroDetConfig, image: np.ndarray) -> np.ndarray:
    a1 = np.maximum(_conv_stride2(image, cfg.conv1_w, cfg.conv1_b, pad=2), 0.0)
    return np.maximum(_conv_stride2(a1, cfg.conv2_w, cfg.conv2_b, pad=1), 0.0)


def _class_logits(cfg: MicroDetConfig, features: np.ndarray) -> np.ndarray:
    """Per-cell logits of the 1x1 head, shape (n_classes, h, w)."""
    logits = np.tensordot(cfg.head_w, features, axes=([1], [0])) + cfg.head_b[:, None, None]
    return logits[: cfg.n_classes]


def anchor_box(cx: int, cy: int) -> BBox:
    """The fixed anchor of feature cell (cx, cy), centered on the cell center."""
    x = (cx + 0.5) * CELL_STRIDE
    y = (cy + 0.5) * CELL_STRIDE
    half = ANCHOR_SIDE / 2.0
    return BBox(x - half, y - half, x + half, y + half)


def _cell_of(cfg: MicroDetConfig, det: Detection) -> tuple[int, int]:
    """Recover the feature cell a detection came from; reject foreign boxes."""
    fh, fw = cfg.feature_hw
    cx = int(round((det.box.x1 + det.box.x2) / 2.0 / CELL_STRIDE - 0.5))
    cy = int(round((det.box.y1 + det.box.y2) / 2.0 / CELL_STRIDE - 0.5))
    if not (0 <= cx < fw and 0 <= cy < fh) or not (0 <= det.class_id < cfg.n_classes):
        raise InvalidParameterError(f"detection {det} does not belong to this detector's grid")
    ref = anchor_box(cx, cy)
    if max(
        abs(ref.x1 - det.box.x1),
        abs(ref.y1 - det.box.y1),
        abs(ref.x2 - det.box.x2),
        abs(ref.y2 - det.box.y2),
    ) > 1e-6:
        raise InvalidParameterError(f"detection box {det.box} is not an anchor of this grid")
    return cx, cy


def _check_input(cfg: MicroDetConfig, image: np.ndarray) -> np.ndarray:
    image = check_image(image)
    if image.shape != (3, *cfg.input_hw):
        raise InvalidDimensionError(
            f"image shape {image.shape} does not match detector input (3, "
            f"{cfg.input_hw[0]}, {cfg.input_hw[1]})"
        )
    return image


def forward(cfg: MicroDetConfig, image: np.ndarray) -> tuple[list[Detection], np.ndarray]:
    """Full forward pass: detections sorted by score descending, plus features.

    One detection is emitted per (cell, class). Ties in score keep the
    enumeration order (row-major cells, class-minor), so the output is
    bit-for-bit reproducible.
    """
    image = _check_input(cfg, image)
    features = _feature_stack(cfg, image)
    scores = expit(_class_logits(cfg, features))
    fh, fw = cfg.feature_hw
    ncls = cfg.n_classes

    flat = np.transpose(scores, (1, 2, 0)).reshape(-1)  # (cy * fw + cx) * ncls + cls
    order = np.argsort(-flat, kind="stable")

    boxes = [[anchor_box(cx, cy) for cx in range(fw)] for cy in range(fh)]
    dets = []
    for idx in order:
        cell, cls = divmod(int(idx), ncls)
        cy, cx = divmod(cell, fw)
        dets.append(Detection(box=boxes[cy][cx], class_id=cls, score=float(flat[idx])))
    return dets, features


def grad_score_wrt_features(cfg: MicroDetConfig, image: np.ndarray, det: Detection) -> np.ndarray:
    """Analytic gradient of the detection's pre-sigmoid logit w.r.t. features.

    The 1x1 head makes this exact and local: map i's gradient is the head
    weight w[class, i] at the detection's cell and zero elsewhere.
    """
    _check_input(cfg, image)
    cx, cy = _cell_of(cfg, det)
    grads = np.zeros((cfg.k, *cfg.feature_hw))
    grads[:, cy, cx] = cfg.head_w[det.class_id]
    return grads


class MicroDetectorAdapter(DetectorAdapter):
    """Adapter exposing the micro detector's full capability set."""

    capabilities = frozenset({CAP_DETECT, CAP_FEATURES, CAP_GRAD})
    concurrent_safe = True

    def __init__(self, cfg: MicroDetConfig):
        self.cfg = cfg
        self.input_size = cfg.input_hw
        self.channels = 3
        self.description = f"micro-detector[{cfg.label}]"

    def detect(self, image: np.ndarray) -> list[Detection]:
        return forward(self.cfg, image)[0]

    def features(self, image: np.ndarray) -> np.ndarray:
        return forward(self.cfg, image)[1]

    def grad_features(self, image: np.ndarray, target: Detection) -> np.ndarray:
        return grad_score_wrt_features(self.cfg, image, target)


def detect_adapter(cfg: MicroDetConfig) -> MicroDetectorAdapter:
    """Wrap a config as a DetectorAdapter offering detect/features/grad."""
    return MicroDetectorAdapter(cfg)


_LAYER_FILES = {
    "conv1.weight": ("conv1_w", "conv1_weight.f32t"),
    "conv1.bias": ("conv1_b", "conv1_bias.f32t"),
    "conv2.weight": ("conv2_w", "conv2_weight.f32t"),
    "conv2.bias": ("conv2_b", "conv2_bias.f32t"),
    "head.weight": ("head_w", "head_weight.f32t"),
    "head.bias": ("head_b", "head_bias.f32t"),
}


def _as_chw(arr: np.ndarray) -> np.ndarray:
    """Collapse an N-D array to the 3-D (C, H, W) layout .f32t stores."""
    if arr.ndim == 1:
        return arr.reshape(1, 1, -1)
    if arr.ndim == 2:
        return arr.reshape(1, *arr.shape)
    return arr.reshape(-1, *arr.shape[-2:])


def save_weights(cfg: MicroDetConfig, directory: str) -> None:
    """Store weights as one .f32t per layer plus a JSON manifest.

    Values are rounded to float32 by the format; reload with
    :func:`load_weights` when bit-identical cross-implementation behavior
    matters.
    """
    os.makedirs(directory, exist_ok=True)
    layers = []
    for name, (attr, fname) in _LAYER_FILES.items():
        arr = getattr(cfg, attr)
        write_f32t(os.path.join(directory, fname), _as_chw(arr))
        layers.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {
        "format": "microdet-weights",
        "version": 1,
        "input": [3, cfg.input_hw[0], cfg.input_hw[1]],
        "maps": cfg.k,
        "classes": cfg.n_classes,
        "label": cfg.label,
        "layers": layers,
    }
    with open(os.path.join(directory, WEIGHTS_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_weights(directory: str) -> MicroDetConfig:
    """Load a config saved by :func:`save_weights`."""
    with open(os.path.join(directory, WEIGHTS_MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "microdet-weights" or manifest.get("version") != 1:
        raise InvalidParameterError(f"{directory}: not a micro-detector weights manifest")
    arrays = {}
    for layer in manifest["layers"]:
        attr, _ = _LAYER_FILES[layer["name"]]
        raw = read_f32t(os.path.join(directory, layer["file"]))
        arrays[attr] = raw.reshape(layer["shape"]).astype(np.float64)
    _, h, w = manifest["input"]
    return MicroDetConfig(
        input_hw=(h, w),
        k=int(manifest["maps"]),
        n_classes=int(manifest["classes"]),
        label=str(manifest.get("label", "custom")),
        **arrays,
    )
