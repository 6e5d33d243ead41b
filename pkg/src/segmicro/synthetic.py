"""Synthetic three-class "cells and nuclei" images for tests and demos."""

import numpy as np

from .dataio import Dataset, Sample, combine_masks


def _ellipse(h, w, cy, cx, ry, rx, angle):
    yy, xx = np.mgrid[0:h, 0:w]
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return u * u + v * v <= 1.0


def blob_sample(rng, size=64, n_cells=(2, 4), noise=0.05):
    """One image with bright nuclei inside mid-gray cells on a dark background."""
    h = w = size
    cells = np.zeros((h, w), bool)
    nuclei = np.zeros((h, w), bool)
    for _ in range(rng.integers(n_cells[0], n_cells[1] + 1)):
        ry, rx = rng.uniform(0.14, 0.24, size=2) * size
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        angle = rng.uniform(0, np.pi)
        cell = _ellipse(h, w, cy, cx, ry, rx, angle)
        cells |= cell
        nuc = _ellipse(h, w, cy + rng.uniform(-0.2, 0.2) * ry, cx + rng.uniform(-0.2, 0.2) * rx,
                       ry * rng.uniform(0.35, 0.5), rx * rng.uniform(0.35, 0.5), rng.uniform(0, np.pi))
        nuclei |= nuc & cell
    mask = combine_masks(cells, nuclei)
    image = np.choose(mask, [0.1, 0.45, 0.8]).astype(np.float32)
    image += rng.normal(0, noise, size=image.shape).astype(np.float32)
    return np.clip(image, 0, 1).astype(np.float32), mask


def blob_dataset(n: int, seed: int = 0, size: int = 64, noise: float = 0.05) -> Dataset:
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        image, mask = blob_sample(rng, size, noise=noise)
        samples.append(Sample(image, mask, f"blob_{i:03d}"))
    return Dataset(samples, 3, 1, f"synthetic blobs, seed {seed}")
