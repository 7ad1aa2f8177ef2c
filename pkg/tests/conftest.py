import numpy as np
import pytest
from hypothesis import settings

from recapguard.channel import generate_dataset, load_manifest
from recapguard.detector import ModelConfig, build_model
from recapguard.imaging import ImageBuffer, encode_jpeg
from recapguard.sources import make_source_image, synthesize_source_corpus
from recapguard.training import TrainConfig, split_dataset, train

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory):
    """Twelve procedural source photos."""
    out = tmp_path_factory.mktemp("sources")
    synthesize_source_corpus(out, 12, seed=11, size=160)
    return out


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory, source_dir):
    """Balanced 12-pair dataset with manifest."""
    out = tmp_path_factory.mktemp("dataset")
    generate_dataset(source_dir, 12, seed=21, out_dir=out)
    return load_manifest(out / "manifest.jsonl")


@pytest.fixture(scope="session")
def toy_splits(toy_dataset):
    cfg = TrainConfig(epochs=4, early_stop_patience=3, batch_size=16, seed=5)
    return split_dataset(toy_dataset, cfg)


@pytest.fixture(scope="session")
def toy_trained(toy_splits):
    """A small model trained briefly on the toy dataset; used wherever a
    trained-flag model with real weights is needed."""
    cfg = TrainConfig(epochs=4, early_stop_patience=3, batch_size=16, seed=5)
    model = build_model(ModelConfig(), init_seed=5)
    model, history = train(model, toy_splits, cfg)
    return model, history


@pytest.fixture()
def sample_image():
    return make_source_image(99, size=160)


def image_jpeg_bytes(img: ImageBuffer, quality: int = 92) -> bytes:
    return encode_jpeg(img, quality)


@pytest.fixture()
def sample_jpeg_bytes(sample_image):
    return image_jpeg_bytes(sample_image)
