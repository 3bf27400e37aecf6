"""Shared fixtures: tiny deterministic adapters and synthetic images."""

from __future__ import annotations

import numpy as np
import pytest

from xsal.detectors import BBox, Detection, DetectorAdapter


class ConstantAdapter(DetectorAdapter):
    """Always reports one centered box at a fixed score, whatever the input."""

    concurrent_safe = True
    capabilities = frozenset({"detect"})

    def __init__(self, score: float = 0.5, size: tuple[int, int] = (32, 32)):
        self.input_size = size
        self.score = score
        self.description = f"constant[{score}]"
        h, w = size
        self._det = Detection(BBox(w * 0.25, h * 0.25, w * 0.75, h * 0.75), 0, score)

    def detect(self, image):
        return [self._det]


class ToyLinearAdapter(DetectorAdapter):
    """2x2 scorer with per-pixel sensitivities 4 > 3 > 2 > 1 (row-major).

    The single detection's score is the weight-normalized dot product of the
    weights with channel-mean brightness, so every pixel's causal effect is
    known in closed form and orderings can be enumerated exhaustively.
    """

    input_size = (2, 2)
    channels = 3
    capabilities = frozenset({"detect"})
    concurrent_safe = True
    description = "toy-linear[4,3,2,1]"
    weights = np.array([[4.0, 3.0], [2.0, 1.0]])

    def detect(self, image):
        b = image.mean(axis=0)
        s = float((self.weights * b).sum() / self.weights.sum())
        return [Detection(BBox(0.0, 0.0, 2.0, 2.0), 0, min(max(s, 0.0), 1.0))]


class CountingAdapter(ConstantAdapter):
    """Constant adapter that also records every image it is shown."""

    def __init__(self, score: float = 0.5, size: tuple[int, int] = (32, 32)):
        super().__init__(score, size)
        self.seen: list[np.ndarray] = []

    def detect(self, image):
        self.seen.append(image.copy())
        return super().detect(image)


def make_blob_image(seed: int, size: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Dark frame with one bright rectangular blob at a seeded position."""
    h, w = size
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    image = np.full((3, h, w), 0.1)
    bh = int(rng.integers(h // 4, h // 2 + 1))
    bw = int(rng.integers(w // 4, w // 2 + 1))
    y = int(rng.integers(0, h - bh + 1))
    x = int(rng.integers(0, w - bw + 1))
    image[:, y : y + bh, x : x + bw] = 0.9
    return image


def f32_exact(image: np.ndarray) -> np.ndarray:
    """Snap to float32-representable values so a wire round trip is lossless."""
    return image.astype(np.float32).astype(np.float64)


@pytest.fixture
def toy_adapter() -> ToyLinearAdapter:
    return ToyLinearAdapter()


@pytest.fixture
def toy_image() -> np.ndarray:
    # Brightness descends with the weights, making the weights ordering the
    # unique optimum of both curves (checked exhaustively in the tests).
    return np.broadcast_to(np.array([[1.0, 0.75], [0.5, 0.25]]), (3, 2, 2)).copy()
