"""Image loading, class-folder datasets and a synthetic texture generator."""

import os
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.utils import check_random_state

from ._validation import check_int
from .descriptors import to_gray
from .exceptions import InvalidInputError

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class DatasetError(InvalidInputError):
    """Raised for missing, empty or unreadable image collections."""


def load_image(path):
    """Read an 8-bit grayscale or RGB image as a float grayscale array in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB", "I;16"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    if arr.dtype == np.uint16:
        arr = arr.astype(np.float64) / 65535.0
    return to_gray(arr)


def save_image(path, img):
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _image_files(directory):
    return sorted(p for p in Path(directory).iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def list_images(directory):
    """Image paths in `directory`, or in its class subfolders if it has any.

    Returns
    -------
    paths : list of Path
    labels : ndarray of int
        Class index per path (sorted subfolder order), all zero for a flat folder.
    class_names : list of str
    """
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if subdirs:
        paths, labels, names = [], [], []
        for c, sub in enumerate(subdirs):
            files = _image_files(sub)
            paths.extend(files)
            labels.extend([c] * len(files))
            names.append(sub.name)
    else:
        paths = _image_files(root)
        labels = [0] * len(paths)
        names = [root.name]
    if not paths:
        raise DatasetError(f"no images found under {root}")
    return paths, np.asarray(labels, dtype=np.int64), names


def split_per_class(labels, n_train, n_test=None, seed=0):
    """First `n_train` of each class after a seeded shuffle go to training.

    The next `n_test` (default: all remaining) go to testing. Returns two
    sorted index arrays.
    """
    n_train = check_int(n_train, "n_train", minimum=1)
    labels = np.asarray(labels)
    rng = check_random_state(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if len(idx) <= n_train:
            raise DatasetError(f"class {c} has {len(idx)} images, need more than {n_train}")
        train.extend(idx[:n_train])
        rest = idx[n_train:]
        test.extend(rest if n_test is None else rest[:n_test])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def oriented_texture(size, angle, period, phase, rng, *, noise=0.15, contrast=0.4):
    """Sinusoidal grating at `angle` (radians) with additive noise, clipped to [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    img = 0.5 + contrast * np.sin(2 * np.pi * u / period + phase)
    img += noise * rng.standard_normal((size, size))
    return np.clip(img, 0.0, 1.0)


def make_oriented_textures(n_per_class=100, size=64, seed=0, *, jitter=np.pi / 8):
    """Two-class synthetic set: near-vertical vs near-horizontal gratings.

    Class 0 stripes vary along x (orientation 0 +- `jitter`), class 1 along y.
    Period, phase and contrast are drawn per image.

    Returns
    -------
    images : list of ndarray of shape (size, size)
    labels : ndarray of int
    """
    n_per_class = check_int(n_per_class, "n_per_class", minimum=1)
    rng = check_random_state(seed)
    images, labels = [], []
    for c, base in enumerate((0.0, np.pi / 2)):
        for _ in range(n_per_class):
            angle = base + rng.uniform(-jitter, jitter)
            period = rng.uniform(6.0, 14.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            contrast = rng.uniform(0.25, 0.45)
            images.append(oriented_texture(size, angle, period, phase, rng, contrast=contrast))
            labels.append(c)
    return images, np.asarray(labels, dtype=np.int64)


def write_dataset(root, images, labels, class_names=None):
    """Store images as PNG in one subfolder per class."""
    root = Path(root)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    names = class_names or [f"class{c}" for c in classes]
    counters = {}
    for img, c in zip(images, labels):
        k = int(np.searchsorted(classes, c))
        sub = root / names[k]
        os.makedirs(sub, exist_ok=True)
        n = counters.get(k, 0)
        counters[k] = n + 1
        save_image(sub / f"{n:05d}.png", img)
    return root
