"""Seeded synthetic dataset generation.

Reference images are procedural mixtures of smooth color gradients,
shapes, and fine texture. Low-light counterparts apply gamma, intensity
scaling, and additive noise; the graded-distortion mode emits a
monotone quality ladder per content for training the no-reference
scorer. Everything is driven by an explicit seed, so a dataset is
byte-reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import PreconditionError
from .imaging import clamp01, convolve_valid, gaussian_window, save_image
from .manifest import ManifestEntry, write_manifest
from .util import derive_rng

GAMMA_RANGE = (2.0, 5.0)
SCALE_RANGE = (0.1, 0.5)
NOISE_RANGE = (0.01, 0.05)
GRADE_LABELS = (1.0, 0.8, 0.6, 0.4, 0.2)  # level 0 is pristine


def add_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return clamp01(img + rng.normal(0.0, sigma, img.shape))


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Same-size Gaussian blur with edge-replicate padding."""
    if sigma <= 0:
        return img.copy()
    size = max(3, int(2 * round(3 * sigma) + 1))
    k = gaussian_window(size, sigma)
    pad = size // 2
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return convolve_valid(padded, k)


def synth_reference(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One procedural normal-light reference image."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        acc = np.full((size, size), rng.uniform(0.4, 0.7))
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            acc += rng.uniform(0.05, 0.18) * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        img[:, :, c] = acc
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.15, 0.95, size=3)
        alpha = rng.uniform(0.5, 0.9)
        cy, cx = rng.uniform(0.1, 0.9, size=2) * size
        if rng.random() < 0.5:
            hy, hx = rng.uniform(0.08, 0.3, size=2) * size
            mask = (np.abs(np.mgrid[0:size][:, None] - cy) < hy) & (
                np.abs(np.mgrid[0:size][None, :] - cx) < hx
            )
        else:
            r = rng.uniform(0.06, 0.25) * size
            mask = (np.mgrid[0:size][:, None] - cy) ** 2 + (
                np.mgrid[0:size][None, :] - cx
            ) ** 2 < r**2
        img[mask] = (1.0 - alpha) * img[mask] + alpha * color
    img += rng.normal(0.0, 0.015, img.shape)
    return clamp01(img)


def degrade_lowlight(ref: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-light counterpart: gamma in [2,5], scale in [0.1,0.5], noise."""
    gamma = rng.uniform(*GAMMA_RANGE)
    scale = rng.uniform(*SCALE_RANGE)
    sigma = rng.uniform(*NOISE_RANGE)
    return clamp01(scale * ref**gamma + rng.normal(0.0, sigma, ref.shape))


def distort_graded(ref: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    """Composite distortion ladder: blur + dimming + noise grow with level."""
    if level == 0:
        return ref.copy()
    out = gaussian_blur(ref, 0.45 * level)
    out = out * (1.0 - 0.11 * level)
    return add_noise(out, 0.015 * level, rng)


def generate_pairs(out_dir: str, count: int, seed: int, size: int = 64) -> str:
    """Write ``count`` (low, reference) pairs plus a paired manifest.

    Returns the manifest path. Low-light images always have strictly
    lower mean luminance than their references by construction.
    """
    if count < 1:
        raise PreconditionError("need at least one pair")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(count):
        rng = derive_rng("synth-pairs", seed, i)
        ref = synth_reference(rng, size)
        low = degrade_lowlight(ref, rng)
        ref_name = f"c{i:04d}__ref.ppm"
        low_name = f"c{i:04d}__low.ppm"
        save_image(ref, os.path.join(out_dir, ref_name))
        save_image(low, os.path.join(out_dir, low_name))
        entries.append(ManifestEntry(low_name, ref_name))
    manifest_path = os.path.join(out_dir, "pairs.tsv")
    write_manifest(manifest_path, entries)
    return manifest_path


def generate_labelled(out_dir: str, contents: int, seed: int, size: int = 64) -> str:
    """Write a graded-distortion quality set: five levels per content with
    monotone decreasing targets. Returns the manifest path."""
    if contents < 1:
        raise PreconditionError("need at least one content")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(contents):
        rng = derive_rng("synth-labelled", seed, i)
        ref = synth_reference(rng, size)
        for level, label in enumerate(GRADE_LABELS):
            name = f"c{i:04d}__g{level}.ppm"
            save_image(distort_graded(ref, level, rng), os.path.join(out_dir, name))
            entries.append(ManifestEntry(name, None, label))
    manifest_path = os.path.join(out_dir, "labelled.tsv")
    write_manifest(manifest_path, entries)
    return manifest_path
