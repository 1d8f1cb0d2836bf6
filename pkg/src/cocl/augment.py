"""Two-view stochastic image augmentation.

Images are channels-first float arrays in [0, 1]. Every transform clamps
its output back into that range. Randomness comes only from the
``numpy.random.Generator`` handed in, and :func:`view_rng` derives one
generator per (seed, epoch, sample, view) so results do not depend on
iteration order or worker count.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (C, H, W)
    label: int = 0


@dataclass(frozen=True)
class JitterStrength:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1


@dataclass(frozen=True)
class AugConfig:
    crop_scale_range: Tuple[float, float] = (0.5, 1.0)
    aspect_range: Tuple[float, float] = (3 / 4, 4 / 3)
    target_size: Optional[Tuple[int, int]] = None  # None keeps the input size
    flip_prob: float = 0.5
    jitter: JitterStrength = field(default_factory=JitterStrength)
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.0
    blur_kernel: int = 7
    blur_sigma: Tuple[float, float] = (0.1, 2.0)

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        a_lo, a_hi = self.aspect_range
        if not 0 < a_lo <= a_hi:
            raise ConfigError(f"invalid aspect_range {self.aspect_range}")
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ConfigError(f"{name} must be a probability, got {p}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ConfigError("blur_kernel must be a positive odd integer")

    @classmethod
    def identity(cls) -> "AugConfig":
        return cls(crop_scale_range=(1.0, 1.0), aspect_range=(1.0, 1.0), flip_prob=0.0,
                   jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)


def view_rng(seed: int, epoch: int = 0, sample_index: int = 0, view_index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, sample_index, view_index]))


def _clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


# ------------------------------------------------------------------- geometry


@functools.lru_cache(maxsize=1024)
def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) half-pixel-centre linear interpolation weights."""
    pos = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    np.add.at(m, (np.arange(dst), lo), 1 - frac)
    np.add.at(m, (np.arange(dst), hi), frac)
    m.flags.writeable = False
    return m


def resize_bilinear(pixels: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array, sampling at half-pixel centres."""
    _, h, w = pixels.shape
    oh, ow = size
    if (oh, ow) == (h, w):
        return pixels.copy()
    ry = _interp_matrix(h, oh)
    rx = _interp_matrix(w, ow)
    return np.matmul(np.matmul(ry, pixels), rx.T)


def _crop_window(h: int, w: int, scale_range, aspect_range, rng: np.random.Generator):
    if scale_range[0] >= 1.0:
        # area fraction 1 leaves only the full image
        return 0, 0, h, w
    area = h * w
    log_lo, log_hi = math.log(aspect_range[0]), math.log(aspect_range[1])
    for _ in range(10):
        target_area = area * rng.uniform(*scale_range)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target_area * ratio)))
        ch = int(round(math.sqrt(target_area / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # fallback: central crop clamped to the aspect range
    in_ratio = w / h
    if in_ratio < aspect_range[0]:
        cw, ch = w, int(round(w / aspect_range[0]))
    elif in_ratio > aspect_range[1]:
        ch, cw = h, int(round(h * aspect_range[1]))
    else:
        cw, ch = w, h
    ch, cw = max(1, min(ch, h)), max(1, min(cw, w))
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def random_resized_crop(s: ImageSample, scale_range, target, rng: np.random.Generator,
                        aspect_range=(3 / 4, 4 / 3)) -> ImageSample:
    """Crop an area fraction drawn from ``scale_range`` and resize it to ``target``."""
    lo, hi = scale_range
    if not 0 < lo <= hi <= 1:
        raise ConfigError(f"invalid scale range {scale_range}")
    _, h, w = s.pixels.shape
    target = (h, w) if target is None else tuple(target)
    top, left, ch, cw = _crop_window(h, w, scale_range, aspect_range, rng)
    crop = s.pixels[:, top:top + ch, left:left + cw]
    return ImageSample(_clamp(resize_bilinear(crop, target)), s.label)


def horizontal_flip(s: ImageSample) -> ImageSample:
    return ImageSample(s.pixels[:, :, ::-1].copy(), s.label)


# ---------------------------------------------------------------------- colour


def _gray(pixels: np.ndarray) -> np.ndarray:
    if pixels.shape[0] == 1:
        return pixels
    return np.tensordot(LUMA, pixels[:3], axes=1)[None]


def grayscale(s: ImageSample) -> ImageSample:
    if s.pixels.shape[0] == 1:
        return ImageSample(s.pixels.copy(), s.label)
    g = _gray(s.pixels)
    return ImageSample(_clamp(np.repeat(g, s.pixels.shape[0], axis=0)), s.label)


def _rgb_to_hsv(rgb: np.ndarray):
    r, g, b = rgb
    maxc = rgb.max(axis=0)
    minc = rgb.min(axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h, s, v) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def adjust_brightness(pixels, factor):
    return _clamp(pixels * factor)


def adjust_contrast(pixels, factor):
    m = _gray(pixels).mean()
    return _clamp((pixels - m) * factor + m)


def adjust_saturation(pixels, factor):
    if pixels.shape[0] == 1:
        return pixels
    return _clamp((pixels - _gray(pixels)) * factor + _gray(pixels))


def adjust_hue(pixels, shift):
    if pixels.shape[0] == 1:
        return pixels
    h, s, v = _rgb_to_hsv(pixels[:3])
    out = pixels.copy()
    out[:3] = _hsv_to_rgb((h + shift) % 1.0, s, v)
    return _clamp(out)


def color_jitter(s: ImageSample, strengths: JitterStrength, rng: np.random.Generator) -> ImageSample:
    """Brightness/contrast/saturation/hue perturbations applied in random order.

    Factors are uniform in ``[max(0, 1-x), 1+x]``; the hue shift is uniform
    in ``[-hue, hue]`` (fraction of a full turn). Saturation and hue leave
    single-channel images untouched.
    """
    for v in (strengths.brightness, strengths.contrast, strengths.saturation):
        if v < 0:
            raise ConfigError("jitter strengths must be non-negative")
    if not 0 <= strengths.hue <= 0.5:
        raise ConfigError("hue strength must lie in [0, 0.5]")
    pixels = s.pixels
    for op in rng.permutation(4):
        if op == 0 and strengths.brightness > 0:
            b = strengths.brightness
            pixels = adjust_brightness(pixels, rng.uniform(max(0.0, 1 - b), 1 + b))
        elif op == 1 and strengths.contrast > 0:
            c = strengths.contrast
            pixels = adjust_contrast(pixels, rng.uniform(max(0.0, 1 - c), 1 + c))
        elif op == 2 and strengths.saturation > 0:
            sat = strengths.saturation
            pixels = adjust_saturation(pixels, rng.uniform(max(0.0, 1 - sat), 1 + sat))
        elif op == 3 and strengths.hue > 0:
            pixels = adjust_hue(pixels, rng.uniform(-strengths.hue, strengths.hue))
    return ImageSample(_clamp(pixels), s.label)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(s: ImageSample, sigma: float, kernel_size: int = 7) -> ImageSample:
    """Separable normalised Gaussian blur with reflect padding."""
    k = gaussian_kernel(kernel_size, sigma)
    pad = kernel_size // 2
    _, h, w = s.pixels.shape
    mode = "reflect" if min(h, w) > pad else "symmetric"
    x = np.pad(s.pixels, ((0, 0), (pad, pad), (pad, pad)), mode=mode)
    x = sum(k[i] * x[:, i:i + h, :] for i in range(kernel_size))
    x = sum(k[i] * x[:, :, i:i + w] for i in range(kernel_size))
    return ImageSample(_clamp(x), s.label)


# -------------------------------------------------------------------- pipeline


def augment(s: ImageSample, cfg: AugConfig, rng: np.random.Generator) -> ImageSample:
    out = random_resized_crop(s, cfg.crop_scale_range, cfg.target_size, rng, cfg.aspect_range)
    if rng.random() < cfg.flip_prob:
        out = horizontal_flip(out)
    if rng.random() < cfg.jitter_prob:
        out = color_jitter(out, cfg.jitter, rng)
    if rng.random() < cfg.grayscale_prob:
        out = grayscale(out)
    if cfg.blur_prob > 0 and rng.random() < cfg.blur_prob:
        out = gaussian_blur(out, rng.uniform(*cfg.blur_sigma), cfg.blur_kernel)
    return out


def two_views(s: ImageSample, cfg: AugConfig, rng_seed, epoch: int = 0,
              sample_index: int = 0) -> Tuple[ImageSample, ImageSample]:
    """Two independent draws of the pipeline applied to ``s``."""
    first = augment(s, cfg, view_rng(rng_seed, epoch, sample_index, 0))
    second = augment(s, cfg, view_rng(rng_seed, epoch, sample_index, 1))
    return first, second


def augment_batch(pixels: np.ndarray, labels: Sequence[int], cfg: AugConfig, seed: int, epoch: int,
                  sample_offset: int = 0, workers: int = 1, views: int = 2) -> np.ndarray:
    """``views`` draws of each image stacked as (views*N, C, H, W); sample k owns rows
    views*k .. views*k + views - 1. View v of a sample is the same whatever ``views`` is."""
    n = len(pixels)
    if views < 1:
        raise ValueError("views must be >= 1")

    def one(k):
        s = ImageSample(pixels[k], int(labels[k]))
        return [augment(s, cfg, view_rng(seed, epoch, sample_offset + k, v)).pixels for v in range(views)]

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(one, range(n)))
    else:
        groups = [one(k) for k in range(n)]
    return np.stack([v for group in groups for v in group])


def with_target(cfg: AugConfig, size) -> AugConfig:
    return replace(cfg, target_size=None if size is None else tuple(size))
