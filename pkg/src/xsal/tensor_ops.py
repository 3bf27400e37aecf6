"""Dense raster primitives: resize, masking, blur, normalization, .f32t files.

Conventions used throughout the library:

- A 2-D map is a float ``ndarray`` of shape ``(h, w)`` indexed ``[y, x]``.
- An image is a float ``ndarray`` of shape ``(c, h, w)`` (planar channels,
  ``c`` in {1, 3}) with values in ``[0, 1]``.
- All in-memory math is float64; float32 appears only in the ``.f32t``
  file format.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.ndimage import convolve1d

from .errors import InvalidDimensionError, InvalidParameterError

F32T_MAGIC = b"F32T"


def check_map(arr: np.ndarray, name: str = "map") -> np.ndarray:
    """Validate a 2-D float map: two dimensions, non-empty, finite values."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidDimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidParameterError(f"{name} contains non-finite values")
    return arr


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a planar image: shape (c, h, w), c in {1, 3}, values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3) or img.shape[1] == 0 or img.shape[2] == 0:
        raise InvalidDimensionError(
            f"{name} must have shape (c, h, w) with c in {{1, 3}}, got {img.shape}"
        )
    if not np.isfinite(img).all():
        raise InvalidParameterError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise InvalidParameterError(f"{name} values must lie in [0, 1]")
    return img


def bilinear_resize(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resize a 2-D map with bilinear interpolation, half-pixel-center convention.

    Every output pixel (x, y) samples the source at
    ``x_s = (x + 0.5) * w_src / w_dst - 0.5`` (same for y), clamped to the
    borders. Interpolation uses the lerp form ``a + t * (b - a)``, and each
    result is clamped to the range of its four source neighbours, so constant
    maps are preserved bitwise and outputs never leave ``[min(src), max(src)]``.
    """
    src = check_map(src, "src")
    if out_w < 1 or out_h < 1:
        raise InvalidDimensionError(f"output size must be >= 1x1, got {out_w}x{out_h}")
    src_h, src_w = src.shape
    if (out_h, out_w) == (src_h, src_w):
        return src.copy()

    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (src_w / out_w) - 0.5
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (src_h / out_h) - 0.5
    np.clip(xs, 0.0, src_w - 1.0, out=xs)
    np.clip(ys, 0.0, src_h - 1.0, out=ys)

    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = xs - x0
    fy = (ys - y0)[:, None]

    a = src[y0[:, None], x0[None, :]]
    b = src[y0[:, None], x1[None, :]]
    c = src[y1[:, None], x0[None, :]]
    d = src[y1[:, None], x1[None, :]]

    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    out = top + fy * (bot - top)

    # keep the convex-combination guarantee exact despite rounding
    lo = np.minimum(np.minimum(a, b), np.minimum(c, d))
    hi = np.maximum(np.maximum(a, b), np.maximum(c, d))
    return np.clip(out, lo, hi)


def hadamard_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply every channel of the image elementwise by the mask."""
    image = check_image(image)
    mask = check_map(mask, "mask")
    if image.shape[1:] != mask.shape:
        raise InvalidDimensionError(
            f"mask shape {mask.shape} does not match image spatial shape {image.shape[1:]}"
        )
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise InvalidParameterError("mask values must lie in [0, 1]")
    return image * mask[None, :, :]


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Sampled Gaussian kernel on [-radius, radius], normalized to sum 1."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    if radius < 1:
        raise InvalidParameterError(f"radius must be >= 1, got {radius}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Separable Gaussian blur with edge-replicated borders.

    The kernel is the normalized sampled Gaussian, so constant images are
    fixed points and the output stays in [0, 1].
    """
    image = check_image(image)
    kernel = gaussian_kernel(sigma, radius)
    out = np.empty_like(image)
    for ch in range(image.shape[0]):
        tmp = convolve1d(image[ch], kernel, axis=1, mode="nearest")
        out[ch] = convolve1d(tmp, kernel, axis=0, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def minmax_normalize(arr: np.ndarray) -> np.ndarray:
    """Affinely rescale a map to [0, 1]; a constant map becomes all zeros."""
    arr = check_map(arr)
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def write_f32t(path, data: np.ndarray) -> None:
    """Write a tensor to the ``.f32t`` raster format.

    Layout: magic ``F32T``, three little-endian uint32 (C, H, W), then
    C*H*W little-endian IEEE-754 float32 in planar channel order. 2-D input
    is written with C=1.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.size == 0:
        raise InvalidDimensionError(f"expected a 2-D or 3-D tensor, got shape {np.shape(data)}")
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(F32T_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32t(path) -> np.ndarray:
    """Read a ``.f32t`` file back as a float32 array of shape (C, H, W)."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != F32T_MAGIC:
            raise InvalidParameterError(f"{path}: not an .f32t file")
        c, h, w = struct.unpack("<III", header[4:])
        if c == 0 or h == 0 or w == 0:
            raise InvalidDimensionError(f"{path}: zero-sized tensor {c}x{h}x{w}")
        payload = fh.read(4 * c * h * w)
    if len(payload) != 4 * c * h * w:
        raise InvalidParameterError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)
