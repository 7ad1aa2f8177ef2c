"""Synthetic screen-to-camera recapture channel.

Models the physical chain that turns a displayed image into a re-photographed
one: subpixel stripe structure of the panel, oblique viewing geometry, uneven
illumination, lens defocus, sensor resampling against the panel grid (the
moire mechanism), color shift, sensor noise, and JPEG re-encoding. Used to
generate labeled original/recaptured datasets at desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, DecodeError, InsufficientSourceError
from .imaging import ImageBuffer, _luma, dct8_matrix, load_image, save_image

MANIFEST_SCHEMA = "recapguard/manifest/1"
MANIFEST_NAME = "manifest.jsonl"

LABEL_ORIGINAL = "original"
LABEL_RECAPTURED = "recaptured"

# Fixed panel geometry: each source pixel covers a 4x4 patch of display
# pixels carrying three RGB subpixel stripe columns. The wider stripe period
# keeps panel structure visible under the defocus range the channel draws.
DEFAULT_DISPLAY_SCALE = 4.0


@dataclass
class RecaptureParams:
    """Full parameterization of the synthetic screen-camera channel."""

    display_scale: float = 4.0
    subpixel_amplitude: float = 0.15
    view_angle_deg: float = 30.0
    distance_scale: float = 1.0
    illum_gradient: float = 0.15
    vignette_strength: float = 0.15
    defocus_sigma: float = 1.0
    resample_factor: float = 0.37
    channel_gains: tuple = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.01
    jpeg_quality: int = 85
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.view_angle_deg <= 60.0:
            raise ConfigError("view_angle_deg must be in [0, 60]")
        if not 1 <= int(self.jpeg_quality) <= 100:
            raise ConfigError("jpeg_quality must be in [1, 100]")
        if not 0.0 <= self.subpixel_amplitude <= 1.0:
            raise ConfigError("subpixel_amplitude must be in [0, 1]")
        if not 0.0 <= self.illum_gradient <= 1.0:
            raise ConfigError("illum_gradient must be in [0, 1]")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ConfigError("vignette_strength must be in [0, 1]")
        if self.display_scale < 1.0:
            raise ConfigError("display_scale must be >= 1")
        if self.resample_factor <= 0 or self.distance_scale <= 0:
            raise ConfigError("resample_factor and distance_scale must be > 0")
        if self.defocus_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("defocus_sigma and noise_sigma must be >= 0")
        if len(self.channel_gains) != 3 or any(g <= 0 for g in self.channel_gains):
            raise ConfigError("channel_gains must be three positive ratios")

    @classmethod
    def neutral(cls, jpeg_quality: int = 100) -> "RecaptureParams":
        """Parameters under which the channel is an identity up to one JPEG
        round trip at the given quality."""
        return cls(
            subpixel_amplitude=0.0,
            view_angle_deg=0.0,
            distance_scale=1.0,
            illum_gradient=0.0,
            vignette_strength=0.0,
            defocus_sigma=0.0,
            resample_factor=1.0,
            channel_gains=(1.0, 1.0, 1.0),
            noise_sigma=0.0,
            jpeg_quality=jpeg_quality,
        )


@dataclass
class ManifestEntry:
    path: str
    label: str
    source_path: str
    params: dict | None = None


@dataclass
class DatasetManifest:
    entries: list
    seed: int
    created_at: str
    base_dir: str | None = None  # runtime only, not serialized

    def by_label(self, label: str) -> list:
        return [e for e in self.entries if e.label == label]

    def resolve(self, entry: ManifestEntry) -> Path:
        base = Path(self.base_dir) if self.base_dir else Path(".")
        return base / entry.path


def _upsample_with_stripes(data: np.ndarray, scale: float, amplitude: float) -> np.ndarray:
    """Nearest-neighbor upscale to panel resolution with an RGB column-stripe
    mask of the given strength. The mask averages to 1 over each pixel."""
    h, w = data.shape[:2]
    hd, wd = int(round(h * scale)), int(round(w * scale))
    rows = np.minimum((np.arange(hd) + 0.5) / scale, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(wd) + 0.5) / scale, w - 1).astype(np.int64)
    disp = data[rows][:, cols]
    if amplitude > 0:
        stripe = (np.floor(np.arange(wd) * 3.0 / scale).astype(np.int64)) % 3
        mask = 1.0 + amplitude * (3.0 * (stripe[None, :, None] == np.arange(3)[None, None, :]) - 1.0)
        disp = disp * mask.astype(np.float32)
    return disp.astype(np.float32)


def _perspective_warp(disp: np.ndarray, angle_deg: float) -> np.ndarray:
    """Pinhole view of the panel tilted about its horizontal axis; central
    scale is one, vertical extent foreshortens by cos(angle)."""
    if angle_deg == 0.0:
        return disp
    hd, wd = disp.shape[:2]
    phi = math.radians(angle_deg)
    dist = 2.0 * max(hd, wd)
    cx, cy = (wd - 1) / 2.0, (hd - 1) / 2.0
    c, s = math.cos(phi), math.sin(phi)
    # output -> panel homography in centered coordinates
    h_inv = np.array(
        [[dist * c, 0.0, 0.0], [0.0, dist, 0.0], [0.0, -s, dist * c]], dtype=np.float64
    )
    t_fwd = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    t_back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    m = t_fwd @ h_inv @ t_back
    return cv2.warpPerspective(
        disp,
        m,
        (wd, hd),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_REPLICATE,
    )


def _illumination(disp: np.ndarray, gradient: float, vignette: float, direction_rad: float) -> np.ndarray:
    if gradient == 0.0 and vignette == 0.0:
        return disp
    hd, wd = disp.shape[:2]
    v = (np.arange(hd, dtype=np.float32) / max(hd - 1, 1)) - 0.5
    u = (np.arange(wd, dtype=np.float32) / max(wd - 1, 1)) - 0.5
    uu, vv = np.meshgrid(u, v)
    factor = np.ones((hd, wd), dtype=np.float32)
    if gradient > 0.0:
        cd, sd = math.cos(direction_rad), math.sin(direction_rad)
        span = abs(cd) + abs(sd)
        t = (uu * cd + vv * sd + 0.5 * span) / max(span, 1e-9)
        factor *= 1.0 - gradient * t.astype(np.float32)
    if vignette > 0.0:
        rho2 = (uu**2 + vv**2) / 0.5  # 0 at center, 1 at corners
        factor *= 1.0 - vignette * rho2.astype(np.float32)
    return disp * factor[:, :, None]


# JPEG Annex K base quantization tables
_JPEG_LUMA_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)
_DCT8 = dct8_matrix()


def _scaled_quant_table(base: np.ndarray, quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_quantize_roundtrip(img: ImageBuffer, quality: int) -> ImageBuffer:
    """One JPEG compression cycle as exact DCT quantization with 8-bit
    storage rounding. Channels are coded separately (JPEG's RGB colorspace
    mode, no subsampling) with the standard luminance table under libjpeg
    quality scaling; entropy coding is lossless and therefore omitted. At
    quality 100 the cycle stays within coefficient-rounding error of the
    input, which the neutral-channel contract requires."""
    h, w = img.data.shape[:2]
    pad_h, pad_w = (-h) % 8, (-w) % 8
    data = np.pad(img.data, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge").astype(np.float64)
    data = data * 255.0

    hq, wq = data.shape[:2]
    nby, nbx = hq // 8, wq // 8
    blocks = data.reshape(nby, 8, nbx, 8, 3).transpose(0, 2, 4, 1, 3).reshape(-1, 3, 8, 8)
    coeffs = np.einsum("ij,ncjk,lk->ncil", _DCT8, blocks, _DCT8)
    table = _scaled_quant_table(_JPEG_LUMA_Q, quality)
    coeffs = np.rint(coeffs / table) * table
    blocks = np.einsum("ji,ncjk,kl->ncil", _DCT8, coeffs, _DCT8)
    out = blocks.reshape(nby, nbx, 3, 8, 8).transpose(0, 3, 1, 4, 2).reshape(hq, wq, 3)

    stored = np.clip(np.rint(out[:h, :w]), 0.0, 255.0)  # 8-bit storage rounding
    return ImageBuffer((stored / 255.0).astype(np.float32))


def _point_sample(disp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Sample the panel on the camera grid with no anti-alias filtering;
    non-integer sampling ratios alias the panel structure into moire."""
    hd, wd = disp.shape[:2]
    # nearest neighbor of the continuous position (i + 0.5) * ratio - 0.5
    ys = np.clip(np.floor((np.arange(out_h) + 0.5) * (hd / out_h)).astype(np.int64), 0, hd - 1)
    xs = np.clip(np.floor((np.arange(out_w) + 0.5) * (wd / out_w)).astype(np.int64), 0, wd - 1)
    return disp[ys][:, xs]


def simulate_recapture(img: ImageBuffer, params: RecaptureParams) -> ImageBuffer:
    """Run the full display-to-camera chain; deterministic for a fixed seed.

    Stage order: subpixel upsample, perspective, illumination, defocus,
    point resampling, channel gains, sensor noise, JPEG re-encode.
    """
    rng = np.random.default_rng([abs(int(params.seed))])
    illum_direction = rng.uniform(0.0, 2.0 * math.pi)

    disp = _upsample_with_stripes(img.data, params.display_scale, params.subpixel_amplitude)
    disp = _perspective_warp(disp, params.view_angle_deg)
    disp = _illumination(disp, params.illum_gradient, params.vignette_strength, illum_direction)
    if params.defocus_sigma > 0:
        ksize = max(3, int(2 * round(3.0 * params.defocus_sigma) + 1))
        disp = cv2.GaussianBlur(disp, (ksize, ksize), sigmaX=params.defocus_sigma,
                                borderType=cv2.BORDER_REPLICATE)

    r_eff = params.resample_factor * params.distance_scale
    out_h = max(1, int(round(img.height * r_eff)))
    out_w = max(1, int(round(img.width * r_eff)))
    cam = _point_sample(disp, out_h, out_w)

    gains = np.asarray(params.channel_gains, dtype=np.float32).reshape(1, 1, 3)
    cam = cam * gains
    if params.noise_sigma > 0:
        cam = cam + rng.normal(0.0, params.noise_sigma, cam.shape).astype(np.float32)
    cam = np.clip(cam, 0.0, 1.0).astype(np.float32)
    return jpeg_quantize_roundtrip(ImageBuffer(cam), params.jpeg_quality)


def sample_params(rng_seed: int) -> RecaptureParams:
    """Draw channel parameters uniformly from their default ranges."""
    rng = np.random.default_rng([abs(int(rng_seed))])
    if rng.random() < 0.5:
        resample = rng.uniform(0.3, 0.7)
    else:
        resample = rng.uniform(1.3, 1.7)
    return RecaptureParams(
        display_scale=DEFAULT_DISPLAY_SCALE,
        subpixel_amplitude=rng.uniform(0.05, 0.25),
        view_angle_deg=rng.uniform(15.0, 45.0),
        distance_scale=rng.uniform(0.8, 1.2),
        illum_gradient=rng.uniform(0.05, 0.25),
        vignette_strength=rng.uniform(0.0, 0.3),
        defocus_sigma=rng.uniform(0.5, 1.5),
        resample_factor=resample,
        channel_gains=tuple(rng.uniform(0.9, 1.1, size=3).tolist()),
        noise_sigma=rng.uniform(0.005, 0.02),
        jpeg_quality=int(rng.integers(70, 96)),
        seed=abs(int(rng_seed)),
    )


def moire_energy(img: ImageBuffer) -> float:
    """Fraction of non-DC spectral power of the luma channel above half the
    Nyquist radius; 0 for a constant image, 1 for a period-2 checkerboard."""
    luma = _luma(img.data)
    power = np.abs(np.fft.fft2(luma)) ** 2
    fy = np.fft.fftfreq(luma.shape[0])[:, None]
    fx = np.fft.fftfreq(luma.shape[1])[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    power[0, 0] = 0.0
    total = power.sum()
    if total <= 0.0:
        return 0.0
    return float(power[radius > 0.25].sum() / total)


def _item_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence([abs(int(seed)), int(index)])
    return int(ss.generate_state(1)[0])


def _decodable_sources(source_dir: Path, needed: int) -> list:
    if not source_dir.is_dir():
        raise InsufficientSourceError(f"source directory does not exist: {source_dir}")
    exts = {".jpg", ".jpeg", ".png"}
    candidates = sorted(p for p in source_dir.iterdir() if p.suffix.lower() in exts)
    picked = []
    for path in candidates:
        try:
            load_image(path)
        except (DecodeError, OSError):
            continue
        picked.append(path)
        if len(picked) == needed:
            return picked
    raise InsufficientSourceError(
        f"need {needed} decodable images in {source_dir}, found {len(picked)}"
    )


def generate_dataset(source_dir, n_pairs: int, seed: int, out_dir) -> DatasetManifest:
    """Write a balanced dataset of originals and simulated recaptures.

    Originals are re-encoded at JPEG quality 95; each recapture is simulated
    from the same source with per-item parameters derived deterministically
    from (seed, item index). Rerunning with the same inputs reproduces both
    the manifest entries and the image bytes.
    """
    source_dir, out_dir = Path(source_dir), Path(out_dir)
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    sources = _decodable_sources(source_dir, n_pairs)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for i, src in enumerate(sources):
        img = load_image(src)
        orig_rel = f"originals/{i:05d}.jpg"
        save_image(img, out_dir / orig_rel, jpeg_quality=95)
        entries.append(ManifestEntry(orig_rel, LABEL_ORIGINAL, str(src)))

        params = sample_params(_item_seed(seed, i))
        recap = simulate_recapture(img, params)
        recap_rel = f"recaptures/{i:05d}.jpg"
        save_image(recap, out_dir / recap_rel, jpeg_quality=params.jpeg_quality)
        params_record = json.loads(json.dumps(asdict(params)))  # JSON-native types
        entries.append(ManifestEntry(recap_rel, LABEL_RECAPTURED, str(src), params_record))

    manifest = DatasetManifest(
        entries=entries,
        seed=seed,
        created_at=datetime.now(timezone.utc).isoformat(),
        base_dir=str(out_dir),
    )
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        meta = {
            "schema": MANIFEST_SCHEMA,
            "seed": manifest.seed,
            "created_at": manifest.created_at,
            "n_entries": len(manifest.entries),
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"empty manifest: {path}")
    meta = json.loads(lines[0])
    if meta.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"unknown manifest schema in {path}")
    entries = [ManifestEntry(**json.loads(ln)) for ln in lines[1:]]
    return DatasetManifest(
        entries=entries,
        seed=meta["seed"],
        created_at=meta["created_at"],
        base_dir=str(path.parent),
    )
