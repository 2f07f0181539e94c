"""Shared generators for synthetic images and dictionaries."""

import numpy as np
import pytest
from scipy import ndimage


def textured_image(size: int, seed: int) -> np.ndarray:
    """Synthetic image with natural-like structure: a brightness gradient,
    oriented gratings, disks with intensity offsets, and smoothed noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = 90.0 + 50.0 * (xx + yy) / (2 * size)
    for _ in range(4):
        fx, fy = rng.uniform(0.05, 0.45, 2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(12, 30) * np.sin(fx * xx + fy * yy + phase)
    for _ in range(6):
        cy, cx = rng.uniform(0.1, 0.9, 2) * size
        radius = rng.uniform(0.05, 0.2) * size
        disk = ((yy - cy) ** 2 + (xx - cx) ** 2) < radius * radius
        img[disk] += rng.uniform(-45, 45)
    img += ndimage.gaussian_filter(rng.standard_normal((size, size)) * 25, 1.5)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def awgn(image: np.ndarray, sigma: float, seed: int = 123) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return np.clip(np.round(noisy), 0, 255).astype(np.uint8)


def gaussian_blur(image: np.ndarray, radius: float) -> np.ndarray:
    out = ndimage.gaussian_filter(image.astype(np.float64), radius)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def random_unit_atoms(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    atoms = rng.standard_normal((dim, count))
    return atoms / np.linalg.norm(atoms, axis=0)


def low_coherence_atoms(rng: np.random.Generator, dim: int = 8, count: int = 12,
                        target: float = 0.32, rounds: int = 4000) -> np.ndarray:
    """Frame with max pairwise |cosine| below ``target``, by alternating
    Gram shrinkage with rank reduction back to the signal dimension."""
    atoms = random_unit_atoms(rng, dim, count)
    for _ in range(rounds):
        gram = atoms.T @ atoms
        off = gram - np.diag(np.diag(gram))
        if np.abs(off).max() < target:
            break
        shrunk = np.clip(gram, -target, target)
        np.fill_diagonal(shrunk, 1.0)
        vals, vecs = np.linalg.eigh(shrunk)
        top = np.argsort(vals)[-dim:]
        atoms = (vecs[:, top] * np.sqrt(np.clip(vals[top], 0, None))).T
        atoms /= np.linalg.norm(atoms, axis=0)
    return atoms


@pytest.fixture(scope="session", autouse=True)
def _warm_coder():
    """Compile the batch coder once so timings elsewhere are steady-state."""
    from sparq.pursuit import Dictionary, batch_omp

    rng = np.random.default_rng(0)
    dictionary = Dictionary(random_unit_atoms(rng, 6, 9))
    batch_omp(dictionary, rng.standard_normal((6, 4)), 2)
