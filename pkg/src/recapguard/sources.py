"""Procedural photo-like source images for desk-scale experiments.

Generates smooth, structured scenes (gradients, soft and sharp shapes, mild
texture) whose spectral energy sits at low frequencies, so that channel
artifacts introduced by the recapture simulator stand out the way they do in
real photographs.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .imaging import ImageBuffer, save_image


def make_source_image(seed: int, size: int = 256) -> ImageBuffer:
    """Render one synthetic scene; deterministic per seed."""
    rng = np.random.default_rng([abs(int(seed))])

    # smooth background: tiny random field upscaled bilinearly per channel
    k = int(rng.integers(3, 9))
    base = rng.uniform(0.15, 0.85, size=(k, k, 3)).astype(np.float32)
    canvas = cv2.resize(base, (size, size), interpolation=cv2.INTER_LINEAR)

    # a handful of filled shapes, some soft-edged, some sharp
    n_shapes = int(rng.integers(3, 8))
    for _ in range(n_shapes):
        color = tuple(float(c) for c in rng.uniform(0.05, 0.95, size=3))
        layer = canvas.copy()
        kind = rng.integers(0, 3)
        cx, cy = int(rng.integers(0, size)), int(rng.integers(0, size))
        if kind == 0:
            axes = (int(rng.integers(size // 12, size // 3)), int(rng.integers(size // 12, size // 3)))
            angle = float(rng.uniform(0, 180))
            cv2.ellipse(layer, (cx, cy), axes, angle, 0, 360, color, thickness=-1)
        elif kind == 1:
            w = int(rng.integers(size // 10, size // 2))
            h = int(rng.integers(size // 10, size // 2))
            cv2.rectangle(layer, (cx - w // 2, cy - h // 2), (cx + w // 2, cy + h // 2), color, -1)
        else:
            x2, y2 = int(rng.integers(0, size)), int(rng.integers(0, size))
            thickness = int(rng.integers(2, max(3, size // 24)))
            cv2.line(layer, (cx, cy), (x2, y2), color, thickness)
        if rng.random() < 0.5:
            sigma = float(rng.uniform(1.0, 3.0))
            ksize = int(2 * round(3 * sigma) + 1)
            layer = cv2.GaussianBlur(layer, (ksize, ksize), sigma)
        alpha = float(rng.uniform(0.6, 1.0))
        canvas = canvas * (1 - alpha) + layer * alpha

    # one mild texture region (low-contrast sinusoid)
    if rng.random() < 0.8:
        period = float(rng.uniform(8.0, 24.0))
        theta = float(rng.uniform(0, np.pi))
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period)
        x0, y0 = int(rng.integers(0, size // 2)), int(rng.integers(0, size // 2))
        x1, y1 = x0 + int(rng.integers(size // 4, size // 2)), y0 + int(rng.integers(size // 4, size // 2))
        amp = float(rng.uniform(0.03, 0.08))
        canvas[y0:y1, x0:x1] += amp * (wave[y0:y1, x0:x1, None] - 0.5)

    # gentle global shading so scenes are not flat
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    shade = 1.0 - float(rng.uniform(0.0, 0.12)) * (xx * float(rng.uniform(-1, 1)) + yy * float(rng.uniform(-1, 1)) + 1.0) / 2.0
    canvas *= shade[..., None]

    # lens/demosaic softness: real photos are never pixel-sharp
    aa_sigma = float(rng.uniform(0.7, 1.0))
    canvas = cv2.GaussianBlur(canvas, (7, 7), aa_sigma)

    return ImageBuffer(np.clip(canvas, 0.0, 1.0).astype(np.float32))


def synthesize_source_corpus(out_dir, count: int, seed: int, size: int = 256) -> list:
    """Write `count` PNG scenes under out_dir; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = make_source_image(seed * 1_000_003 + i, size=size)
        path = out_dir / f"src_{i:05d}.png"
        save_image(img, path)
        paths.append(path)
    return paths
