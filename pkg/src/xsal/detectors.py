"""Detector adapter contract, box geometry, and target re-identification.

Every saliency generator talks to a detector exclusively through
:class:`DetectorAdapter`. The only required capability is ``detect``;
``features`` and ``grad_features`` are optional so that pure black-box
detectors (e.g. remote bridge servers without gradient access) can still be
explained by RISE and SIDU.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CapabilityMissingError,
    InvalidDimensionError,
    InvalidParameterError,
    NoDetectionsError,
)

DEFAULT_SCORE_MIN = 0.05
DEFAULT_IOU_MIN = 0.5

CAP_DETECT = "detect"
CAP_FEATURES = "features"
CAP_GRAD = "grad_features"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in input-image pixel coordinates, corner form."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise InvalidParameterError(f"box coordinates must be finite, got {self}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise InvalidParameterError(f"box must satisfy x2 > x1 and y2 > y1, got {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    """One detector output: box geometry, class id, confidence score."""

    box: BBox
    class_id: int
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise InvalidParameterError(f"score must lie in [0, 1], got {self.score}")

    def to_json(self) -> dict:
        return {"box": self.box.as_list(), "class_id": self.class_id, "score": self.score}

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        box = obj["box"]
        if len(box) != 4:
            raise InvalidParameterError(f"box must have 4 coordinates, got {box}")
        return cls(
            box=BBox(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
            class_id=int(obj["class_id"]),
            score=float(obj["score"]),
        )


class DetectorAdapter(abc.ABC):
    """Capability contract a detector must satisfy to be explained.

    Attributes:
        input_size: (height, width) the adapter expects, in pixels.
        channels: channel count of the expected input image.
        capabilities: subset of {"detect", "features", "grad_features"}.
            "detect" is mandatory; offering "grad_features" requires
            "features" as well (feature maps and their gradients pair up).
        concurrent_safe: whether concurrent detect calls are permitted.
            Engines serialize calls to adapters that declare False.
        description: free-form self-description recorded in run manifests.
    """

    input_size: tuple[int, int]
    channels: int = 3
    capabilities: frozenset[str] = frozenset({CAP_DETECT})
    concurrent_safe: bool = False
    description: str = "detector"

    @abc.abstractmethod
    def detect(self, image: np.ndarray) -> list[Detection]:
        """Run the detector on an image and return all detections."""

    def features(self, image: np.ndarray) -> np.ndarray:
        """Feature maps of the detector's chosen layer, shape (N, h, w)."""
        raise CapabilityMissingError(f"{self.description}: no 'features' capability")

    def grad_features(self, image: np.ndarray, target: Detection) -> np.ndarray:
        """Gradient of the target's score logit w.r.t. the feature maps."""
        raise CapabilityMissingError(f"{self.description}: no 'grad_features' capability")


def require_capability(adapter: DetectorAdapter, capability: str) -> None:
    if capability not in adapter.capabilities:
        raise CapabilityMissingError(
            f"{adapter.description}: capability '{capability}' not offered "
            f"(has {sorted(adapter.capabilities)})"
        )


def check_adapter_input(adapter: DetectorAdapter, image: np.ndarray) -> None:
    if image.shape != (adapter.channels, *adapter.input_size):
        raise InvalidDimensionError(
            f"image shape {image.shape} does not match adapter input "
            f"({adapter.channels}, {adapter.input_size[0]}, {adapter.input_size[1]})"
        )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def select_top_box(dets: list[Detection]) -> Detection:
    """The detection with the highest score; ties go to the lowest index."""
    if not dets:
        raise NoDetectionsError("detector returned no detections")
    best = dets[0]
    for det in dets[1:]:
        if det.score > best.score:
            best = det
    return best


def match_box(
    dets: list[Detection],
    target: Detection,
    score_min: float = DEFAULT_SCORE_MIN,
    iou_min: float = DEFAULT_IOU_MIN,
) -> Detection | None:
    """Re-identify the target among new detections.

    Candidates need score >= score_min and IoU(candidate, target) >= iou_min;
    among them the highest-IoU one wins, ties broken by higher score, then by
    lowest index. Returns None when no candidate qualifies — the caller maps
    that to score 0.
    """
    for name, v in (("score_min", score_min), ("iou_min", iou_min)):
        if not (0.0 <= v <= 1.0):
            raise InvalidParameterError(f"{name} must lie in [0, 1], got {v}")
    best: Detection | None = None
    best_key = (-1.0, -1.0)
    for det in dets:
        if det.score < score_min:
            continue
        overlap = iou(det.box, target.box)
        if overlap < iou_min:
            continue
        key = (overlap, det.score)
        if key > best_key:
            best_key = key
            best = det
    return best


def target_score(adapter: DetectorAdapter, image: np.ndarray, target: Detection) -> float:
    """Detect on the image and return the re-identified target's score, or 0.

    Runs the adapter, then :func:`match_box` with the default thresholds.
    A vanished detection scores 0, keeping the perturbation metrics total.
    """
    check_adapter_input(adapter, image)
    match = match_box(adapter.detect(image), target)
    return 0.0 if match is None else match.score
