"""Shared batched-evaluation loop for the perturbation-based methods."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, TypeVar

import numpy as np

from .detectors import Detection, DetectorAdapter, target_score
from .tensor_ops import hadamard_mask

T = TypeVar("T")


def _batched(
    eval_one: Callable[[int], T], n: int, batch: int, serial: bool
) -> Iterator[tuple[int, T]]:
    # Chunked map keeps completion order equal to index order, so reductions
    # over the stream cannot depend on the degree of parallelism.
    if serial:
        for i in range(n):
            yield i, eval_one(i)
        return
    with ThreadPoolExecutor(max_workers=batch) as pool:
        for start in range(0, n, batch):
            chunk = range(start, min(start + batch, n))
            yield from zip(chunk, pool.map(eval_one, chunk))


def evaluate_masked(
    adapter: DetectorAdapter,
    image: np.ndarray,
    target: Detection,
    mask_at: Callable[[int], np.ndarray],
    n: int,
    batch: int,
) -> Iterator[tuple[int, np.ndarray, float]]:
    """Score the image under n masks, yielding (index, mask, score) in order.

    Up to ``batch`` masked evaluations run concurrently when the adapter
    declares concurrent access; otherwise calls are serialized. Results are
    always yielded in mask-index order, so any reduction over them is
    independent of the degree of parallelism.
    """

    def eval_one(i: int) -> tuple[np.ndarray, float]:
        mask = mask_at(i)
        score = target_score(adapter, hadamard_mask(image, mask), target)
        return mask, score

    serial = batch <= 1 or not adapter.concurrent_safe
    for i, (mask, score) in _batched(eval_one, n, batch, serial):
        yield i, mask, score


def evaluate_perturbed(
    adapter: DetectorAdapter,
    image_at: Callable[[int], np.ndarray],
    target: Detection,
    n: int,
    batch: int,
) -> Iterator[tuple[int, float]]:
    """Score n arbitrary perturbed images, yielding (index, score) in order.

    Same concurrency contract as :func:`evaluate_masked`; the caller owns
    the construction of each perturbed image.
    """

    def eval_one(i: int) -> float:
        return target_score(adapter, image_at(i), target)

    serial = batch <= 1 or not adapter.concurrent_safe
    yield from _batched(eval_one, n, batch, serial)
