"""Similarity-difference and uniqueness (SIDU-style) feature-mask saliency.

The recipe: the detector's own feature maps, upsampled to input size,
serve as masks. Each masked input is scored, and every mask is
weighted by (a) how close its response stays to the unmasked response
(similarity difference, a Gaussian-shaped kernel on the response distance)
and (b) how different its response is from all other masked responses
(uniqueness, the summed pairwise distances). The saliency map is the
weighted sum of the masks.

The method carries no class conditioning of its own; the queried detection
enters only through the score channel used to read the responses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .detectors import (
    CAP_FEATURES,
    Detection,
    DetectorAdapter,
    check_adapter_input,
    match_box,
    require_capability,
)
from .engine import evaluate_masked
from .errors import InvalidDimensionError, InvalidParameterError, NoMatchError
from .tensor_ops import bilinear_resize, minmax_normalize


@dataclass(frozen=True)
class SiduConfig:
    """Feature-mask construction and weighting parameters.

    sigma: width of the similarity-difference kernel.
    binarize: threshold the upsampled feature masks (default on). With it
        off, the raw normalized activations act as continuous masks.
    bin_threshold: threshold as a fraction of each map's maximum.
    batch: masked evaluations per adapter round-trip.

    Distances are Euclidean throughout.
    """

    sigma: float = 0.25
    binarize: bool = True
    bin_threshold: float = 0.5
    batch: int = 24

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not (0.0 < self.bin_threshold < 1.0):
            raise InvalidParameterError(
                f"bin_threshold must lie in (0, 1), got {self.bin_threshold}"
            )
        if self.batch < 1:
            raise InvalidParameterError(f"batch must be >= 1, got {self.batch}")


def build_feature_masks(
    features: np.ndarray, cfg: SiduConfig, input_w: int, input_h: int
) -> np.ndarray:
    """Turn a feature stack into input-sized masks.

    Each map is min-max normalized (constant maps become all-zero), resized
    to the input, and, when binarize is on, thresholded at bin_threshold of
    its maximum (>= threshold -> 1, else 0).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.size == 0:
        raise InvalidDimensionError(f"feature stack must be (N, h, w), got {features.shape}")
    masks = np.empty((features.shape[0], input_h, input_w))
    for i, fmap in enumerate(features):
        mask = bilinear_resize(minmax_normalize(fmap), input_w, input_h)
        if cfg.binarize:
            mask = (mask >= cfg.bin_threshold).astype(np.float64)
        masks[i] = mask
    return masks


def _check_vectors(vectors: list[np.ndarray]) -> np.ndarray:
    arr = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vectors]
    length = arr[0].shape[0]
    for v in arr:
        if v.ndim != 1 or v.shape[0] != length:
            raise InvalidDimensionError("score vectors must all share one length")
    return np.stack(arr)


def similarity_differences(p_o, preds: list, sigma: float) -> np.ndarray:
    """exp(-d_i / (2 sigma^2)) with d_i the Euclidean distance of p_i to p_o."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    ref = np.atleast_1d(np.asarray(p_o, dtype=np.float64))
    stack = _check_vectors([ref, *preds])[1:]
    dists = np.linalg.norm(stack - ref[None, :], axis=1)
    return np.exp(-dists / (2.0 * sigma * sigma))


def uniqueness(preds: list) -> np.ndarray:
    """u_i = sum over j of the Euclidean distance between p_i and p_j."""
    stack = _check_vectors(preds)
    diffs = stack[:, None, :] - stack[None, :, :]
    return np.linalg.norm(diffs, axis=2).sum(axis=1)


def sidu_saliency(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    cfg: SiduConfig = SiduConfig(),
    score_vector_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Weighted feature-mask sum for one detection.

    Responses default to the re-identified target's score as a length-1
    vector, matching box-score evaluation; pass ``score_vector_fn`` to read a
    full response vector instead (e.g. per-class confidences of a
    classification-style adapter). Spends one detect on the unmasked image
    plus one per feature mask.
    """
    require_capability(adapter, CAP_FEATURES)
    check_adapter_input(adapter, image)
    h, w = image.shape[1:]

    match = match_box(adapter.detect(image), target)
    if match is None:
        raise NoMatchError(f"target {target} not re-identified on the unperturbed image")

    masks = build_feature_masks(adapter.features(image), cfg, w, h)
    n = masks.shape[0]

    if score_vector_fn is None:
        p_o = np.array([match.score])
        preds = [None] * n
        for i, _mask, score in evaluate_masked(
            adapter, image, target, lambda i: masks[i], n, cfg.batch
        ):
            preds[i] = np.array([score])
    else:
        from .tensor_ops import hadamard_mask

        p_o = np.atleast_1d(np.asarray(score_vector_fn(image), dtype=np.float64))
        preds = [
            np.atleast_1d(np.asarray(score_vector_fn(hadamard_mask(image, masks[i])), dtype=np.float64))
            for i in range(n)
        ]

    sd = similarity_differences(p_o, preds, cfg.sigma)
    uniq = uniqueness(preds)

    saliency = np.zeros((h, w))
    for i in range(n):
        weight = sd[i] * uniq[i]
        if weight != 0.0:
            saliency += weight * masks[i]
    return saliency
