"""Insertion and deletion curves for judging saliency maps by their effect.

A map is scored by perturbing the image along the pixel ranking it
induces. Deletion removes the highest-ranked pixels first
and watches the detector's confidence in the target collapse; insertion
reveals them onto a blurred copy and watches confidence recover. The area
under each curve summarizes the run: low deletion and high insertion areas
mean the ranking concentrates on evidence the detector actually uses.

Both curves are total functions of the frame: steps where the target is no
longer re-identified contribute a score of zero rather than an error, since
losing the detection is exactly what deletion is meant to cause.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detectors import Detection, DetectorAdapter, check_adapter_input
from .engine import evaluate_perturbed
from .errors import InvalidDimensionError, InvalidParameterError
from .tensor_ops import check_map, gaussian_blur


@dataclass(frozen=True)
class CurveConfig:
    """Perturbation schedule shared by both curves.

    steps: number of perturbation increments; curves carry steps + 1 points
        covering fractions 0 through 1 inclusive.
    fill: value written into deleted pixels, in the image domain [0, 1].
    blur_sigma / blur_radius: Gaussian used for the insertion baseline.
    batch: perturbed evaluations per adapter round-trip.
    """

    steps: int = 50
    fill: float = 0.0
    blur_sigma: float = 5.0
    blur_radius: int = 11
    batch: int = 24

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParameterError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 <= self.fill <= 1.0):
            raise InvalidParameterError(f"fill must lie in [0, 1], got {self.fill}")
        if self.blur_sigma <= 0:
            raise InvalidParameterError(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.blur_radius < 1:
            raise InvalidParameterError(f"blur_radius must be >= 1, got {self.blur_radius}")
        if self.batch < 1:
            raise InvalidParameterError(f"batch must be >= 1, got {self.batch}")


@dataclass(frozen=True)
class Curve:
    """One perturbation run: scores over perturbed-area fractions."""

    kind: str
    fractions: np.ndarray
    scores: np.ndarray
    auc: float


@dataclass(frozen=True)
class CurvePair:
    deletion: Curve
    insertion: Curve


def pixel_order(saliency: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending saliency.

    Equal values keep ascending row-major order, so the ranking is a pure
    function of the map with no dependence on sort internals.
    """
    check_map(saliency)
    return np.argsort(-saliency.ravel(), kind="stable")


def pixel_counts(n_pixels: int, steps: int) -> np.ndarray:
    """Cumulative perturbed-pixel counts, floor(k * n / steps) for each step."""
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    return (np.arange(steps + 1) * n_pixels) // steps


def trapezoid_auc(fractions: np.ndarray, scores: np.ndarray) -> float:
    fractions = np.asarray(fractions, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if fractions.shape != scores.shape or fractions.ndim != 1 or fractions.size < 2:
        raise InvalidDimensionError("fractions and scores must be matching 1-D arrays")
    return float(np.trapezoid(scores, fractions))


def _check_order(order: np.ndarray, n_pixels: int) -> np.ndarray:
    order = np.asarray(order)
    if order.shape != (n_pixels,) or not np.array_equal(
        np.sort(order), np.arange(n_pixels)
    ):
        raise InvalidParameterError(
            f"order must be a permutation of the {n_pixels} flat pixel indices"
        )
    return order


def _run_curve(
    adapter: DetectorAdapter,
    image: np.ndarray,
    base: np.ndarray,
    target: Detection,
    order: np.ndarray,
    cfg: CurveConfig,
    kind: str,
) -> Curve:
    # Step k replaces the first count[k] ranked pixels of ``image`` with the
    # corresponding pixels of ``base`` across all channels.
    h, w = image.shape[1:]
    counts = pixel_counts(h * w, cfg.steps)
    image_flat = image.reshape(image.shape[0], -1)
    base_flat = base.reshape(base.shape[0], -1)

    def image_at(k: int) -> np.ndarray:
        out = image_flat.copy()
        sel = order[: counts[k]]
        out[:, sel] = base_flat[:, sel]
        return out.reshape(image.shape)

    scores = np.empty(cfg.steps + 1)
    for k, score in evaluate_perturbed(adapter, image_at, target, cfg.steps + 1, cfg.batch):
        scores[k] = score

    fractions = np.linspace(0.0, 1.0, cfg.steps + 1)
    return Curve(kind, fractions, scores, trapezoid_auc(fractions, scores))


def deletion_curve(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    order: np.ndarray,
    cfg: CurveConfig = CurveConfig(),
) -> Curve:
    """Score the target while zeroing pixels in the given ranking order."""
    check_adapter_input(adapter, image)
    order = _check_order(order, image.shape[1] * image.shape[2])
    fill = np.full_like(image, cfg.fill)
    return _run_curve(adapter, image, fill, target, order, cfg, "deletion")


def insertion_curve(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    order: np.ndarray,
    cfg: CurveConfig = CurveConfig(),
) -> Curve:
    """Score the target while revealing pixels onto a blurred baseline."""
    check_adapter_input(adapter, image)
    order = _check_order(order, image.shape[1] * image.shape[2])
    base = gaussian_blur(image, cfg.blur_sigma, cfg.blur_radius)
    # Reveal composites the original over the baseline, so swap the roles.
    return _run_curve(adapter, base, image, target, order, cfg, "insertion")


def causal_curves(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    saliency: np.ndarray,
    cfg: CurveConfig = CurveConfig(),
) -> CurvePair:
    """Both curves for one saliency map, sharing its pixel ranking."""
    if saliency.shape != image.shape[1:]:
        raise InvalidDimensionError(
            f"saliency {saliency.shape} does not cover image {image.shape[1:]}"
        )
    order = pixel_order(saliency)
    return CurvePair(
        deletion=deletion_curve(adapter, image, target, order, cfg),
        insertion=insertion_curve(adapter, image, target, order, cfg),
    )


@dataclass(frozen=True)
class BaselineResult:
    """Mean curve areas over random pixel orderings."""

    deletion_auc: float
    insertion_auc: float
    deletion_aucs: np.ndarray
    insertion_aucs: np.ndarray


def random_baseline(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    trials: int = 20,
    seed: int = 0,
    cfg: CurveConfig = CurveConfig(),
) -> BaselineResult:
    """Chance-level curve areas: mean AUC over seeded random orderings.

    A saliency map carries signal only to the extent its deletion area falls
    below and its insertion area rises above this baseline.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    check_adapter_input(adapter, image)
    n_pixels = image.shape[1] * image.shape[2]
    dels = np.empty(trials)
    ins = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        order = rng.permutation(n_pixels)
        dels[t] = deletion_curve(adapter, image, target, order, cfg).auc
        ins[t] = insertion_curve(adapter, image, target, order, cfg).auc
    return BaselineResult(float(dels.mean()), float(ins.mean()), dels, ins)
