"""Image decoding, deterministic preprocessing, and training-time augmentation.

All pixel data is held as float32 RGB in [0, 1]; 8-bit conversion happens only
at file and codec boundaries.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeError

# De-facto standard ImageNet channel statistics
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ImageBuffer:
    """Decoded RGB raster, row-major float32 (H, W, 3) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ConfigError(f"image must be (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError("image must be at least 1x1")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ConfigError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ConfigError("image intensities must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class PreprocessConfig:
    """Deterministic resize + per-channel normalization for model input."""

    target_size: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    resize_kernel: str = "bilinear"

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ConfigError("std components must be > 0")
        if self.resize_kernel != "bilinear":
            raise ConfigError(f"unsupported resize kernel: {self.resize_kernel}")
        if self.target_size < 1:
            raise ConfigError("target_size must be >= 1")


@dataclass
class AugmentConfig:
    """Training augmentation bounds.

    A zero `max_rotation_deg` or `color_jitter_frac`, or a None range,
    disables the corresponding effect.
    """

    hflip_prob: float = 0.5
    max_rotation_deg: float = 5.0
    color_jitter_frac: float = 0.10
    blur_sigma_range: tuple | None = (0.1, 2.0)
    jpeg_quality_range: tuple | None = (70, 95)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must be in [0, 1]")
        if self.max_rotation_deg < 0:
            raise ConfigError("max_rotation_deg must be >= 0")
        if self.color_jitter_frac < 0 or self.color_jitter_frac >= 1:
            raise ConfigError("color_jitter_frac must be in [0, 1)")
        if self.blur_sigma_range is not None:
            lo, hi = self.blur_sigma_range
            if not (0.1 <= lo <= hi <= 2.0):
                raise ConfigError("blur_sigma_range must be within [0.1, 2.0]")
        if self.jpeg_quality_range is not None:
            lo, hi = self.jpeg_quality_range
            if not (70 <= lo <= hi <= 95):
                raise ConfigError("jpeg_quality_range must be within [70, 95]")


def to_uint8(img: ImageBuffer) -> np.ndarray:
    return np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> ImageBuffer:
    return ImageBuffer(arr.astype(np.float32) / 255.0)


def load_image(path) -> ImageBuffer:
    """Decode a JPEG/PNG file to an RGB buffer in [0, 1].

    Alpha, if present, is composited over white. Raises DecodeError for
    corrupt or unsupported files and OSError for a missing path.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                im = im.convert("RGBA")
                bg = Image.new("RGBA", im.size, (255, 255, 255, 255))
                im = Image.alpha_composite(bg, im)
            rgb = im.convert("RGB")
            return from_uint8(np.asarray(rgb))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from None


def decode_image_bytes(data: bytes) -> ImageBuffer:
    """Decode in-memory raster bytes; raises DecodeError on failure."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                im = im.convert("RGBA")
                bg = Image.new("RGBA", im.size, (255, 255, 255, 255))
                im = Image.alpha_composite(bg, im)
            return from_uint8(np.asarray(im.convert("RGB")))
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image bytes: {exc}") from None


def encode_jpeg(img: ImageBuffer, quality: int) -> bytes:
    """Encode to JPEG bytes. 4:4:4 subsampling keeps the codec near-lossless
    at quality 100, which the channel simulator's neutral contract requires."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="JPEG", quality=int(quality), subsampling=0)
    return buf.getvalue()


def jpeg_roundtrip(img: ImageBuffer, quality: int) -> ImageBuffer:
    return decode_image_bytes(encode_jpeg(img, quality))


def save_image(img: ImageBuffer, path, jpeg_quality: int = 95) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".jpg", ".jpeg"):
        path.write_bytes(encode_jpeg(img, jpeg_quality))
    else:
        Image.fromarray(to_uint8(img)).save(path)


def preprocess(img: ImageBuffer, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Bilinear-resize to the target square and normalize per channel.

    Returns a float32 array of shape (3, target, target).
    """
    cfg = cfg or PreprocessConfig()
    size = (cfg.target_size, cfg.target_size)
    resized = cv2.resize(img.data, size, interpolation=cv2.INTER_LINEAR)
    mean = np.asarray(cfg.mean, dtype=np.float32).reshape(1, 1, 3)
    std = np.asarray(cfg.std, dtype=np.float32).reshape(1, 1, 3)
    normed = (resized - mean) / std
    return np.ascontiguousarray(normed.transpose(2, 0, 1))


def denormalize(tensor: np.ndarray, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Invert preprocess normalization back to (H, W, 3) pixel values."""
    cfg = cfg or PreprocessConfig()
    mean = np.asarray(cfg.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(cfg.std, dtype=np.float32).reshape(3, 1, 1)
    return (tensor * std + mean).transpose(1, 2, 0)


def _luma(data: np.ndarray) -> np.ndarray:
    return data[..., 0] * 0.299 + data[..., 1] * 0.587 + data[..., 2] * 0.114


# JPEG-convention BT.601 full-range color transform
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def rgb255_to_ycbcr(data255: np.ndarray) -> np.ndarray:
    return data255 @ _RGB_TO_YCC.T.astype(data255.dtype)


def ycbcr_to_rgb255(ycc: np.ndarray) -> np.ndarray:
    return ycc @ _YCC_TO_RGB.T.astype(ycc.dtype)


def dct8_matrix() -> np.ndarray:
    """Orthonormal 8x8 DCT-II basis."""
    k = np.arange(8)[:, None]
    i = np.arange(8)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / 16.0) * np.sqrt(2.0 / 8.0)
    mat[0] /= np.sqrt(2.0)
    return mat


def _gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    ksize = max(3, int(2 * round(3.0 * sigma) + 1))
    return cv2.GaussianBlur(data, (ksize, ksize), sigmaX=sigma, borderType=cv2.BORDER_REPLICATE)


def augment(img: ImageBuffer, cfg: AugmentConfig, draw_index: int) -> ImageBuffer:
    """Apply flip/rotation/color-jitter/blur/JPEG within configured bounds.

    Deterministic in (cfg.seed, draw_index): the same pair always produces
    byte-identical output. All random draws are consumed in a fixed order so
    toggling one effect does not shift the others.
    """
    rng = np.random.default_rng([abs(int(cfg.seed)), int(draw_index)])
    u_flip = rng.random()
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    jitter = rng.uniform(1.0 - cfg.color_jitter_frac, 1.0 + cfg.color_jitter_frac, size=3)
    if cfg.blur_sigma_range is not None:
        sigma = rng.uniform(*cfg.blur_sigma_range)
    else:
        sigma = 0.0
    if cfg.jpeg_quality_range is not None:
        quality = int(rng.integers(cfg.jpeg_quality_range[0], cfg.jpeg_quality_range[1] + 1))
    else:
        quality = 0

    data = img.data
    if u_flip < cfg.hflip_prob:
        data = data[:, ::-1, :].copy()
    if cfg.max_rotation_deg > 0 and angle != 0.0:
        h, w = data.shape[:2]
        m = cv2.getRotationMatrix2D((w / 2.0 - 0.5, h / 2.0 - 0.5), angle, 1.0)
        data = cv2.warpAffine(
            data, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
        )
    if cfg.color_jitter_frac > 0:
        brightness, contrast, saturation = jitter
        data = data * np.float32(brightness)
        mean = np.float32(_luma(data).mean())
        data = mean + (data - mean) * np.float32(contrast)
        luma = _luma(data)[..., None]
        data = luma + (data - luma) * np.float32(saturation)
        data = np.clip(data, 0.0, 1.0)
    if sigma > 0:
        data = _gaussian_blur(data, sigma)
    out = ImageBuffer(np.clip(data, 0.0, 1.0).astype(np.float32))
    if quality > 0:
        out = jpeg_roundtrip(out, quality)
    return out
