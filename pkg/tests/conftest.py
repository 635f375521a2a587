import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from neurosoc import create_app
from neurosoc.config import Config
from neurosoc.extensions import db
from neurosoc.services.datasets import MNIST_FILES, mnist_available


def pytest_collection_modifyitems(config, items):
    if mnist_available(Config.NEUROSOC_DATA_DIR):
        return
    skip = pytest.mark.skip(reason=f"MNIST not found under {Config.NEUROSOC_DATA_DIR}")
    for item in items:
        if "mnist" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def app(tmp_path):
    class TestConfig(Config):
        TESTING = True
        SQLALCHEMY_DATABASE_URI = "sqlite://"
        NEUROSOC_DATA_DIR = str(tmp_path / "data")
        NEUROSOC_RESULTS_DIR = str(tmp_path / "results")
        AUTO_CREATE_DB = False
        AUTO_BOOTSTRAP = True

    app = create_app(TestConfig)
    with app.app_context():
        db.create_all()
        yield app
        db.session.remove()
        db.drop_all()


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_idx(directory, split, images, labels):
    """Write a gzipped IDX image/label pair under the MNIST file names."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), 28, 28)
    labels = np.asarray(labels, dtype=np.uint8)
    directory.mkdir(parents=True, exist_ok=True)
    with gzip.open(directory / MNIST_FILES[f"{split}_images"], "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        fh.write(images.tobytes())
    with gzip.open(directory / MNIST_FILES[f"{split}_labels"], "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.tobytes())


def stripe_images(n, rng):
    """Toy digits: class k lights rows 2k+4..2k+6, so classes are linearly separable."""
    labels = np.arange(n) % 10
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    for i, k in enumerate(labels):
        images[i, 2 * k + 4 : 2 * k + 7, 4:24] = 200 + rng.integers(0, 56, size=(3, 20))
    return images.reshape(n, 784), labels


@pytest.fixture
def tiny_mnist(app, rng):
    root = Path(app.config["NEUROSOC_DATA_DIR"])
    write_idx(root, "train", *stripe_images(60, rng))
    write_idx(root, "test", *stripe_images(20, rng))
    return root
