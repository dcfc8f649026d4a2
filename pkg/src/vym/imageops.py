"""Deterministic preprocessing of cropped cordon photographs.

Pipeline: pad to the dataset-wide canvas -> per-channel histogram
equalization -> histogram matching against a standard reference image ->
bilinear resize to the model's square input -> scale to [0,1] float,
channel-first. All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster, pixels shaped [height, width, 3]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"RgbImage needs uint8 [H,W,3] pixels, got {px.dtype} {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"RgbImage must be non-empty, got {px.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PreprocessConfig:
    target_side: int = 150
    pad_rgb: tuple[int, int, int] = (255, 255, 255)
    reference_image: str | None = None

    def __post_init__(self):
        if self.target_side < 8:
            raise ValueError(f"target_side must be >= 8, got {self.target_side}")


def load_image(path: str | Path) -> RgbImage:
    """Read a PNG (or any Pillow-supported) image; PPM works as a fallback."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return RgbImage(arr)


def save_image(image: RgbImage, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (image.width, image.height))
            fh.write(image.pixels.tobytes())
    else:
        Image.fromarray(image.pixels, mode="RGB").save(path)


def image_size(path: str | Path) -> tuple[int, int]:
    """(width, height) from the file header, without decoding pixel data."""
    with Image.open(path) as im:
        return im.size


def pad_to_uniform(image: RgbImage, canvas_w: int, canvas_h: int,
                   pad_rgb: tuple[int, int, int] = (255, 255, 255)) -> RgbImage:
    """Center the image on a pad_rgb canvas; extra pixel goes right/bottom."""
    if canvas_w < image.width or canvas_h < image.height:
        raise ValueError(
            f"canvas {canvas_w}x{canvas_h} smaller than image {image.width}x{image.height}"
        )
    out = np.empty((canvas_h, canvas_w, 3), dtype=np.uint8)
    out[:, :] = np.asarray(pad_rgb, dtype=np.uint8)
    top = (canvas_h - image.height) // 2
    left = (canvas_w - image.width) // 2
    out[top:top + image.height, left:left + image.width] = image.pixels
    return RgbImage(out)


def resize_bilinear(image: RgbImage, out_w: int, out_h: int) -> RgbImage:
    """Bilinear resize with half-pixel-centered sampling."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be >= 1, got {out_w}x{out_h}")
    in_h, in_w = image.height, image.width
    if (out_w, out_h) == (in_w, in_h):
        return RgbImage(image.pixels.copy())
    src = image.pixels.astype(np.float64)

    sy = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _channel_cdf(channel: np.ndarray) -> np.ndarray:
    return np.cumsum(np.bincount(channel.ravel(), minlength=256))


def equalize_histogram(image: RgbImage) -> RgbImage:
    """Per-channel discrete equalization: v -> round((cdf(v)-cdf_min)/(N-cdf_min)*255).

    A constant channel (N == cdf_min) maps to itself.
    """
    out = np.empty_like(image.pixels)
    n = image.width * image.height
    for ch in range(3):
        cdf = _channel_cdf(image.pixels[:, :, ch])
        cdf_min = cdf[np.argmax(cdf > 0)]
        if cdf_min == n:
            out[:, :, ch] = image.pixels[:, :, ch]
            continue
        lut = np.rint((cdf - cdf_min) / (n - cdf_min) * 255.0)
        lut = np.clip(lut, 0, 255).astype(np.uint8)
        out[:, :, ch] = lut[image.pixels[:, :, ch]]
    return RgbImage(out)


def match_histogram(image: RgbImage, reference: RgbImage) -> RgbImage:
    """Per-channel CDF matching: each source level maps to the smallest
    reference level whose CDF fraction is >= the source level's CDF fraction."""
    out = np.empty_like(image.pixels)
    n_src = image.width * image.height
    n_ref = reference.width * reference.height
    for ch in range(3):
        cdf_s = _channel_cdf(image.pixels[:, :, ch]) / n_src
        cdf_r = _channel_cdf(reference.pixels[:, :, ch]) / n_ref
        # smallest r with cdf_r[r] >= cdf_s[v]; top level always satisfies it
        lut = np.searchsorted(cdf_r, cdf_s, side="left")
        lut = np.minimum(lut, 255).astype(np.uint8)
        out[:, :, ch] = lut[image.pixels[:, :, ch]]
    return RgbImage(out)


def to_unit_tensor(image: RgbImage) -> np.ndarray:
    """uint8 [H,W,3] -> float64 [3,H,W] scaled to [0,1]."""
    return image.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def preprocess_image(image: RgbImage, reference: RgbImage, canvas: tuple[int, int],
                     config: PreprocessConfig) -> np.ndarray:
    """Full chain for one view: pad, equalize, match, resize, scale."""
    cw, chh = canvas
    img = pad_to_uniform(image, cw, chh, config.pad_rgb)
    img = equalize_histogram(img)
    img = match_histogram(img, reference)
    img = resize_bilinear(img, config.target_side, config.target_side)
    return to_unit_tensor(img)


def preprocess_example(images: list[RgbImage], config: PreprocessConfig,
                       canvas: tuple[int, int],
                       reference: RgbImage | None = None) -> list[np.ndarray]:
    """Preprocess the four views of one cordon into [3,S,S] unit tensors."""
    if reference is None:
        if config.reference_image is None:
            raise ValueError("preprocess_example: no reference image configured")
        reference = load_image(config.reference_image)
    return [preprocess_image(im, reference, canvas, config) for im in images]
