from pathlib import Path

import numpy as np
import pytest

import grcs

CACHE_DIR = Path(__file__).parent / "_cache"
DATA_DIR = Path(__file__).parent / "data"

LUMA = np.array([0.299, 0.587, 0.114])

TRAINING_NAMES = [
    "astronaut", "coins", "moon", "text", "page", "clock",
    "brick", "grass", "gravel", "coffee", "chelsea",
    "immunohistochemistry",
]


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ LUMA
    return img


def training_images():
    import skimage.data as skd
    return [to_gray(getattr(skd, name)()) for name in TRAINING_NAMES]


def cameraman_256():
    """256x256 Cameraman via 2x2 block averaging of the 512x512 original."""
    import skimage.data as skd
    cam = np.asarray(skd.camera(), dtype=np.float64)
    return cam.reshape(256, 2, 256, 2).mean(axis=(1, 3))


def center_crop(img, size):
    h, w = img.shape
    r = (h - size) // 2
    c = (w - size) // 2
    return img[r:r + size, c:c + size]


def smooth_random_images(count, shape, seed):
    """Piecewise-smooth pseudo-images with nonlocal repetition."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        coarse = rng.uniform(0, 255, (shape[0] // 4, shape[1] // 4))
        img = np.kron(coarse, np.ones((4, 4)))
        img += rng.normal(0, 4.0, shape)
        images.append(np.clip(img, 0, 255))
    return images


@pytest.fixture(scope="session")
def desk_model():
    """Patch-8, 64-component prior used by the desk-scale criteria.

    Deterministic; cached on disk so only the first session trains it
    (about 3.5 minutes single-core).
    """
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / "model-p8m8-w40-c6000-k64-em40-s7.jgmm"
    if path.exists():
        return grcs.load_model(path)
    data = grcs.collect_residual_groups(
        training_images(), patch_size=8, group_size=8, window=40,
        count=6000, seed=7)
    model = grcs.train_gmm(data, 64, em_iters=40, ridge=1e-3, seed=7)
    grcs.save_model(model, path)
    return model


@pytest.fixture(scope="session")
def tiny_model():
    """Small patch-4 model for fast coder/solver/CLI tests."""
    data = grcs.collect_residual_groups(
        smooth_random_images(3, (48, 48), seed=5), patch_size=4,
        group_size=6, window=16, count=400, seed=5)
    return grcs.train_gmm(data, 3, em_iters=15, ridge=1e-3, seed=5)
