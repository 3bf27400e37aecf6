"""Image and dataset plumbing around the saliency methods.

Covers file ingestion (PNG to the planar float image convention), dataset
splitting, annotation sidecars, heatmap overlay rendering, curve and AUC
artifact files, and the run manifest that makes a run reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .detectors import BBox
from .errors import ImageFormatError, InvalidDimensionError, InvalidParameterError
from .metrics import Curve
from .tensor_ops import bilinear_resize, check_image, check_map, minmax_normalize

SPECTRUM_TAGS = ("RGB", "NIR", "MIR", "FIR")

DEFAULT_SIZE = (512, 512)

MANIFEST_VERSION = 1


def load_image(path, size: tuple[int, int] | None = DEFAULT_SIZE) -> np.ndarray:
    """Read a PNG (or other raster) into a (3, H, W) float image in [0, 1].

    8-bit and 16-bit grayscale plus 8-bit RGB are accepted; palette images
    are expanded to RGB. Single-channel inputs are replicated across three
    channels so multispectral frames feed the same adapters as color ones.
    When ``size`` is given as (h, w), each channel is bilinear-resized to it.
    """
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            arr = np.asarray(img)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a readable image ({exc})") from exc

    if mode == "L":
        planes = np.broadcast_to(arr / 255.0, (3, *arr.shape))
    elif mode in ("I", "I;16"):
        planes = np.broadcast_to(np.clip(arr / 65535.0, 0.0, 1.0), (3, *arr.shape))
    elif mode == "RGB":
        planes = (arr / 255.0).transpose(2, 0, 1)
    else:
        raise ImageFormatError(f"{path}: unsupported mode {mode!r}, need L, I;16, or RGB")

    image = np.ascontiguousarray(planes, dtype=np.float64)
    if size is not None and image.shape[1:] != tuple(size):
        h, w = size
        image = np.stack([bilinear_resize(ch, w, h) for ch in image])
    check_image(image)
    return image


def save_image_png(path, image: np.ndarray) -> None:
    """Quantize a (3, H, W) float image in [0, 1] to an 8-bit PNG."""
    check_image(image)
    raster = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(raster.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


@dataclass(frozen=True)
class DatasetEntry:
    """One dataset frame: its file, spectrum tag, and annotated objects."""

    path: str
    spectrum: str = "RGB"
    annotations: tuple = ()

    def __post_init__(self):
        if self.spectrum not in SPECTRUM_TAGS:
            raise InvalidParameterError(
                f"spectrum must be one of {SPECTRUM_TAGS}, got {self.spectrum!r}"
            )


def sidecar_path(image_path) -> Path:
    """Annotation sidecar convention: the image path with a .json suffix."""
    return Path(image_path).with_suffix(".json")


def read_sidecar(path) -> DatasetEntry:
    """Parse an annotation sidecar written as

        {"spectrum": "NIR", "objects": [{"box": [x1, y1, x2, y2],
                                         "class": "person"}, ...]}

    The spectrum key is optional and defaults to RGB. The returned entry
    points at the sibling image file.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ImageFormatError(f"{path}: sidecar is not valid JSON ({exc})") from exc
    try:
        objects = tuple(
            (BBox(*(float(v) for v in o["box"])), str(o["class"]))
            for o in obj.get("objects", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ImageFormatError(f"{path}: malformed objects list ({exc})") from exc
    return DatasetEntry(
        path=str(path.with_suffix(".png")),
        spectrum=obj.get("spectrum", "RGB"),
        annotations=objects,
    )


def split_dataset(entries, seed: int = 0, test_fraction: float = 0.2):
    """Seeded shuffle, then carve the first fraction off as the test side.

    Returns (test, train). The default fraction keeps one test frame for
    every four training frames; floor rounding fixes the boundary.
    """
    entries = list(entries)
    n = len(entries)
    if n < 5:
        raise InvalidParameterError(f"need at least 5 entries to split, got {n}")
    if not (0.0 < test_fraction < 1.0):
        raise InvalidParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(n * test_fraction)
    if not (1 <= n_test <= n - 1):
        raise InvalidParameterError(
            f"fraction {test_fraction} of {n} entries leaves an empty side"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [entries[i] for i in order]
    return shuffled[:n_test], shuffled[n_test:]


def _heat_table() -> np.ndarray:
    # 256 RGB rows sampled from the piecewise-linear blue->cyan->yellow->red
    # ramp r = clip(1.5 - |4t - 3|), g = clip(1.5 - |4t - 2|),
    # b = clip(1.5 - |4t - 1|) at t = i / 255.
    t = np.linspace(0.0, 1.0, 256)
    channels = [1.5 - np.abs(4.0 * t - c) for c in (3.0, 2.0, 1.0)]
    return np.clip(np.stack(channels, axis=1), 0.0, 1.0)


HEAT_TABLE = _heat_table()


def heat_colors(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the 256-entry table; returns (..., 3)."""
    idx = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.intp)
    return HEAT_TABLE[idx]


def draw_box(image: np.ndarray, box: BBox, color=(0.0, 1.0, 0.0), thickness: int = 2) -> None:
    """Paint a rectangle outline onto a (3, H, W) image in place.

    Coordinates are rounded to pixels and clamped to the frame; the outline
    grows inward from the box edges.
    """
    if thickness < 1:
        raise InvalidParameterError(f"thickness must be >= 1, got {thickness}")
    h, w = image.shape[1:]
    x1 = int(np.clip(round(box.x1), 0, w - 1))
    y1 = int(np.clip(round(box.y1), 0, h - 1))
    x2 = int(np.clip(round(box.x2), 0, w - 1))
    y2 = int(np.clip(round(box.y2), 0, h - 1))
    col = np.asarray(color, dtype=np.float64).reshape(3, 1, 1)
    t = thickness
    image[:, y1 : min(y1 + t, y2 + 1), x1 : x2 + 1] = col
    image[:, max(y2 - t + 1, y1) : y2 + 1, x1 : x2 + 1] = col
    image[:, y1 : y2 + 1, x1 : min(x1 + t, x2 + 1)] = col
    image[:, y1 : y2 + 1, max(x2 - t + 1, x1) : x2 + 1] = col


def render_overlay(
    image: np.ndarray,
    saliency: np.ndarray,
    target_box: BBox | None = None,
    alpha: float = 0.5,
) -> np.ndarray:
    """Blend a heatmap over the image, optionally marking the explained box.

    The map is min-max normalized, colored through the 256-entry table, and
    mixed as alpha * heat + (1 - alpha) * image. The box outline is drawn
    last, 2 pixels wide, in green.
    """
    check_image(image)
    check_map(saliency)
    if saliency.shape != image.shape[1:]:
        raise InvalidDimensionError(
            f"saliency {saliency.shape} does not cover image {image.shape[1:]}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    heat = heat_colors(minmax_normalize(saliency)).transpose(2, 0, 1)
    out = alpha * heat + (1.0 - alpha) * image
    if target_box is not None:
        draw_box(out, target_box)
    return out


def write_curve_csv(path, curve: Curve) -> None:
    """One curve as CSV: a fraction,score header then one row per point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "score"])
        for frac, score in zip(curve.fractions, curve.scores):
            writer.writerow([repr(float(frac)), repr(float(score))])


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["fraction", "score"]:
        raise InvalidParameterError(f"{path}: missing fraction,score header")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return data[:, 0], data[:, 1]


def write_auc_json(path, deletion_auc: float, insertion_auc: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"deletion_auc": deletion_auc, "insertion_auc": insertion_auc},
            fh,
            indent=2,
        )
        fh.write("\n")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce one artifact-producing run.

    ``configs`` holds one fully materialized dict per dataclass config in
    play (method, curves, baseline), so later defaults cannot silently
    change a replay. Timings are informational and excluded from identity.
    """

    command: str
    adapter_spec: str
    adapter_description: str
    image_path: str
    image_sha256: str
    image_size: tuple[int, int] = DEFAULT_SIZE
    method: str | None = None
    configs: dict = field(default_factory=dict)
    target: dict | None = None
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "method": self.method,
            "adapter": {
                "spec": self.adapter_spec,
                "description": self.adapter_description,
            },
            "image": {
                "path": self.image_path,
                "sha256": self.image_sha256,
                "size": list(self.image_size),
            },
            "target": self.target,
            "configs": self.configs,
            "outputs": self.outputs,
            "timings": self.timings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunManifest":
        if obj.get("version") != MANIFEST_VERSION:
            raise InvalidParameterError(
                f"manifest version {obj.get('version')!r} unsupported, "
                f"need {MANIFEST_VERSION}"
            )
        return cls(
            command=obj["command"],
            adapter_spec=obj["adapter"]["spec"],
            adapter_description=obj["adapter"]["description"],
            image_path=obj["image"]["path"],
            image_sha256=obj["image"]["sha256"],
            image_size=tuple(obj["image"]["size"]),
            method=obj.get("method"),
            configs=obj.get("configs", {}),
            target=obj.get("target"),
            outputs=obj.get("outputs", {}),
            timings=obj.get("timings", {}),
        )


def write_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> RunManifest:
    with open(path, encoding="utf-8") as fh:
        return RunManifest.from_json(json.load(fh))
