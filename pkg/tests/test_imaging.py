import io

import numpy as np
import pytest
from PIL import Image

from recapguard.errors import ConfigError, DecodeError
from recapguard.imaging import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    ImageBuffer,
    PreprocessConfig,
    augment,
    denormalize,
    load_image,
    preprocess,
    to_uint8,
)


def _flat(value, h=64, w=64):
    return ImageBuffer(np.full((h, w, 3), value, dtype=np.float32))


class TestImageBuffer:
    def test_invariants_enforced(self):
        with pytest.raises(ConfigError):
            ImageBuffer(np.zeros((0, 4, 3), dtype=np.float32))
        with pytest.raises(ConfigError):
            ImageBuffer(np.zeros((4, 4, 1), dtype=np.float32))
        with pytest.raises(ConfigError):
            ImageBuffer(np.full((4, 4, 3), 1.5, dtype=np.float32))
        with pytest.raises(ConfigError):
            img = np.zeros((4, 4, 3), dtype=np.float32)
            img[0, 0, 0] = np.nan
            ImageBuffer(img)

    def test_dimensions(self):
        img = ImageBuffer(np.zeros((7, 5, 3), dtype=np.float32))
        assert (img.height, img.width, img.channels) == (7, 5, 3)


class TestLoadImage:
    def test_jpeg_contract(self, tmp_path):
        arr = (np.random.default_rng(0).random((480, 640, 3)) * 255).astype(np.uint8)
        path = tmp_path / "img.jpg"
        Image.fromarray(arr).save(path, quality=95)
        img = load_image(path)
        assert (img.width, img.height, img.channels) == (640, 480, 3)
        assert 0.0 <= img.data.min() and img.data.max() <= 1.0

    def test_truncated_file_decode_error(self, tmp_path):
        arr = np.zeros((32, 32, 3), dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="JPEG")
        path = tmp_path / "broken.jpg"
        path.write_bytes(buf.getvalue()[: len(buf.getvalue()) // 3])
        with pytest.raises(DecodeError):
            load_image(path)

    def test_missing_path_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "nope.png")

    def test_transparent_pixel_composites_white(self, tmp_path):
        rgba = np.zeros((8, 8, 4), dtype=np.uint8)
        rgba[..., :3] = 30
        rgba[..., 3] = 255
        rgba[2, 3] = (10, 20, 30, 0)  # fully transparent
        path = tmp_path / "alpha.png"
        Image.fromarray(rgba, mode="RGBA").save(path)
        img = load_image(path)
        assert np.allclose(img.data[2, 3], (1.0, 1.0, 1.0))


class TestPreprocess:
    def test_mean_image_maps_to_zero(self):
        data = np.empty((50, 70, 3), dtype=np.float32)
        data[:] = np.asarray(IMAGENET_MEAN, dtype=np.float32)
        out = preprocess(ImageBuffer(data))
        assert out.shape == (3, 224, 224)
        assert np.abs(out).max() < 1e-5

    def test_mid_gray_red_channel_value(self):
        expected = (0.5 - IMAGENET_MEAN[0]) / IMAGENET_STD[0]
        out = preprocess(_flat(0.5))
        assert np.allclose(out[0], expected, atol=1e-5)

    def test_output_shape_fixed(self):
        out = preprocess(ImageBuffer(np.zeros((700, 1000, 3), dtype=np.float32)))
        assert out.shape == (3, 224, 224)

    @pytest.mark.parametrize("size", [(10, 10), (224, 224), (13, 301)])
    def test_shape_idempotent_across_inputs(self, size):
        img = ImageBuffer(np.random.default_rng(1).random((*size, 3)).astype(np.float32))
        assert preprocess(img).shape == (3, 224, 224)

    def test_denormalize_inverts(self, sample_image):
        tensor = preprocess(sample_image)
        pixels = denormalize(tensor)
        import cv2

        resized = cv2.resize(sample_image.data, (224, 224), interpolation=cv2.INTER_LINEAR)
        assert np.abs(pixels - resized).max() < 1e-6

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PreprocessConfig(std=(0.0, 0.2, 0.2))
        with pytest.raises(ConfigError):
            PreprocessConfig(resize_kernel="area")


def _aug_off(**overrides):
    base = dict(hflip_prob=0.0, max_rotation_deg=0.0, color_jitter_frac=0.0,
                blur_sigma_range=None, jpeg_quality_range=None, seed=3)
    base.update(overrides)
    return AugmentConfig(**base)


class TestAugment:
    def test_hflip_involution(self, sample_image):
        cfg = _aug_off(hflip_prob=1.0)
        once = augment(sample_image, cfg, draw_index=4)
        twice = augment(once, cfg, draw_index=4)
        assert np.array_equal(twice.data, sample_image.data)

    def test_deterministic(self, sample_image):
        cfg = AugmentConfig(seed=9)
        a = augment(sample_image, cfg, draw_index=17)
        b = augment(sample_image, cfg, draw_index=17)
        assert np.array_equal(a.data, b.data)

    def test_different_draws_differ(self, sample_image):
        cfg = AugmentConfig(seed=9)
        a = augment(sample_image, cfg, draw_index=0)
        b = augment(sample_image, cfg, draw_index=1)
        assert not np.array_equal(a.data, b.data)

    def test_rotation_angle_within_bounds(self):
        # single bright row: the rotated row's fitted slope reveals the angle
        canvas = np.zeros((201, 201, 3), dtype=np.float32)
        canvas[100, :, :] = 1.0
        img = ImageBuffer(canvas)
        cfg = _aug_off(max_rotation_deg=5.0)
        for draw in range(8):
            out = augment(img, cfg, draw_index=draw)
            luma = out.data.mean(axis=2)
            cols = np.arange(40, 161)
            rows = np.array([
                np.average(np.arange(201), weights=luma[:, c] + 1e-9) for c in cols
            ])
            slope = np.polyfit(cols, rows, 1)[0]
            angle = np.degrees(np.arctan(slope))
            assert abs(angle) <= 5.05

    def test_outputs_stay_valid(self, sample_image):
        cfg = AugmentConfig(seed=2)
        for draw in range(6):
            out = augment(sample_image, cfg, draw_index=draw)
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0
            assert out.data.dtype == np.float32

    def test_bounds_validation(self):
        with pytest.raises(ConfigError):
            AugmentConfig(hflip_prob=1.5)
        with pytest.raises(ConfigError):
            AugmentConfig(blur_sigma_range=(0.05, 1.0))
        with pytest.raises(ConfigError):
            AugmentConfig(jpeg_quality_range=(50, 95))
        with pytest.raises(ConfigError):
            AugmentConfig(max_rotation_deg=-1)


def test_to_uint8_roundtrip_quantization():
    img = ImageBuffer(np.linspace(0, 1, 48, dtype=np.float32).reshape(4, 4, 3))
    arr = to_uint8(img)
    assert arr.dtype == np.uint8
    assert np.abs(arr / 255.0 - img.data).max() <= 0.5 / 255.0 + 1e-7
