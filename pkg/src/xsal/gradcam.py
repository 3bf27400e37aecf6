"""Gradient-weighted feature aggregation (Grad-CAM style) for box scores.

Each feature map of the detector's chosen layer is weighted by the mean of
its gradients with respect to the queried detection's score logit. By
default each weighted map is rectified before the sum; the original
sum-then-rectify formulation is available as an option, and the rectifier
can be disabled entirely, which tends to turn near-empty maps into richer
multi-spot ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detectors import (
    CAP_FEATURES,
    CAP_GRAD,
    Detection,
    DetectorAdapter,
    check_adapter_input,
    match_box,
    require_capability,
)
from .errors import InvalidDimensionError, NoMatchError
from .tensor_ops import bilinear_resize


@dataclass(frozen=True)
class GradCamConfig:
    """Knobs for the gradient-weighted generator.

    apply_relu: rectify weighted maps (default on).
    relu_after_sum: rectify the summed map instead of each term; only
        meaningful with apply_relu on. Off by default.
    upsample_to_input: bilinearly resize the map to input resolution.
    """

    apply_relu: bool = True
    relu_after_sum: bool = False
    upsample_to_input: bool = True


def gradcam_weights(grads: np.ndarray) -> np.ndarray:
    """Per-map weights: the mean of each map's gradients.

    grads has shape (N, h, w); the result has shape (N,).
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 3 or grads.size == 0:
        raise InvalidDimensionError(f"gradient stack must be (N, h, w), got {grads.shape}")
    return grads.mean(axis=(1, 2))


def gradcam_saliency(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    cfg: GradCamConfig = GradCamConfig(),
) -> np.ndarray:
    """Saliency for one detection from feature maps and their gradients.

    The target is first re-identified on the image (score >= 0.05,
    IoU >= 0.5); the gradient is taken at the re-identified detection.
    Needs the 'features' and 'grad_features' capabilities.
    """
    require_capability(adapter, CAP_FEATURES)
    require_capability(adapter, CAP_GRAD)
    check_adapter_input(adapter, image)

    match = match_box(adapter.detect(image), target)
    if match is None:
        raise NoMatchError(f"target {target} not re-identified on the image")

    features = np.asarray(adapter.features(image), dtype=np.float64)
    grads = np.asarray(adapter.grad_features(image, match), dtype=np.float64)
    if features.shape != grads.shape:
        raise InvalidDimensionError(
            f"feature stack {features.shape} and gradient stack {grads.shape} differ"
        )

    weights = gradcam_weights(grads)
    terms = weights[:, None, None] * features
    if cfg.apply_relu and not cfg.relu_after_sum:
        terms = np.maximum(terms, 0.0)
    saliency = terms.sum(axis=0)
    if cfg.apply_relu and cfg.relu_after_sum:
        saliency = np.maximum(saliency, 0.0)

    if cfg.upsample_to_input:
        h, w = image.shape[1:]
        saliency = bilinear_resize(saliency, w, h)
    return saliency
