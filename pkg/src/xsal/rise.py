"""Randomized input sampling (RISE-style) black-box saliency.

The recipe: draw N coarse binary masks, bilinearly upsample each to
slightly larger than the input, crop a random input-sized window,
score the detector on every masked image, and average the masks weighted by
those scores, normalized by the mask expectation.

Sampling is fully deterministic: mask i is produced by its own PRNG stream
(numpy PCG64 seeded with ``SeedSequence([seed, i])``), which draws the
grid's cell uniforms first and the two crop offsets (x, then y) second.
Mask i therefore never depends on the mask count, the batch size, or the
number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detectors import Detection, DetectorAdapter, check_adapter_input, match_box
from .engine import evaluate_masked
from .errors import InvalidParameterError, NoMatchError
from .tensor_ops import bilinear_resize


@dataclass(frozen=True)
class RiseConfig:
    """Mask-sampling and evaluation parameters.

    n_masks: number of masks N.
    grid: coarse mask cells per side.
    p_on: probability of a cell being kept (non-zero).
    seed: base seed of the per-mask PRNG streams (unsigned 64-bit).
    batch: masked evaluations per adapter round-trip.
    empirical_norm: divide by the empirical per-pixel mask mean instead of
        the scalar expectation p_on.
    """

    n_masks: int = 500
    grid: int = 8
    p_on: float = 0.1
    seed: int = 0
    batch: int = 24
    empirical_norm: bool = False

    def __post_init__(self):
        if self.n_masks < 1:
            raise InvalidParameterError(f"n_masks must be >= 1, got {self.n_masks}")
        if self.grid < 1:
            raise InvalidParameterError(f"grid must be >= 1, got {self.grid}")
        if not (0.0 <= self.p_on <= 1.0):
            raise InvalidParameterError(f"p_on must lie in [0, 1], got {self.p_on}")
        if self.batch < 1:
            raise InvalidParameterError(f"batch must be >= 1, got {self.batch}")
        if not (0 <= self.seed < 2**64):
            raise InvalidParameterError(f"seed must be an unsigned 64-bit value, got {self.seed}")


def _mask_rng(cfg: RiseConfig, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))


def cell_grid(cfg: RiseConfig, index: int) -> np.ndarray:
    """The raw grid x grid Bernoulli(p_on) cell draws of mask ``index``."""
    rng = _mask_rng(cfg, index)
    return (rng.random((cfg.grid, cfg.grid)) < cfg.p_on).astype(np.float64)


def _upsampled_size(cfg: RiseConfig, input_w: int, input_h: int) -> tuple[int, int]:
    return (
        input_w + math.ceil(input_w / cfg.grid),
        input_h + math.ceil(input_h / cfg.grid),
    )


def sample_mask(cfg: RiseConfig, index: int, input_w: int, input_h: int) -> np.ndarray:
    """Generate mask ``index`` at input resolution, values in [0, 1]."""
    if input_w < cfg.grid or input_h < cfg.grid:
        raise InvalidParameterError(
            f"grid {cfg.grid} exceeds input size {input_w}x{input_h}"
        )
    rng = _mask_rng(cfg, index)
    cells = (rng.random((cfg.grid, cfg.grid)) < cfg.p_on).astype(np.float64)
    up_w, up_h = _upsampled_size(cfg, input_w, input_h)
    ox = int(rng.integers(0, up_w - input_w + 1))
    oy = int(rng.integers(0, up_h - input_h + 1))
    upsampled = bilinear_resize(cells, up_w, up_h)
    return upsampled[oy : oy + input_h, ox : ox + input_w]


def sample_masks(cfg: RiseConfig, input_w: int, input_h: int) -> np.ndarray:
    """The full mask stack, shape (n_masks, input_h, input_w)."""
    masks = np.empty((cfg.n_masks, input_h, input_w))
    for i in range(cfg.n_masks):
        masks[i] = sample_mask(cfg, i, input_w, input_h)
    return masks


def rise_saliency(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    cfg: RiseConfig = RiseConfig(),
) -> np.ndarray:
    """Score-weighted mask average for one detection.

    Exactly n_masks adapter evaluations are spent on masked images, plus one
    detect to re-identify the target on the unperturbed input. Masks are
    generated, evaluated, and accumulated in index order, so the result is
    bitwise reproducible for a given config regardless of batch size.
    """
    if cfg.p_on == 0.0:
        raise InvalidParameterError("p_on = 0 leaves the mask expectation undefined")
    check_adapter_input(adapter, image)
    h, w = image.shape[1:]
    if match_box(adapter.detect(image), target) is None:
        raise NoMatchError(f"target {target} not re-identified on the unperturbed image")

    acc = np.zeros((h, w))
    mask_sum = np.zeros((h, w)) if cfg.empirical_norm else None
    for _i, mask, score in evaluate_masked(
        adapter, image, target, lambda i: sample_mask(cfg, i, w, h), cfg.n_masks, cfg.batch
    ):
        if score != 0.0:
            acc += score * mask
        if mask_sum is not None:
            mask_sum += mask

    if mask_sum is not None:
        return np.divide(acc, mask_sum, out=np.zeros_like(acc), where=mask_sum > 0)
    return acc / (cfg.p_on * cfg.n_masks)
