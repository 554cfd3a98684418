import numpy as np
import pytest

from lumina.imaging import hsv_to_rgb


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def natural_image(seed: int = 0, size: int = 64) -> np.ndarray:
    """Smooth structured color image used as a metric fixture."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        acc = np.full((size, size), 0.5)
        for _ in range(4):
            fx, fy = r.uniform(0.5, 4.0, size=2)
            acc += r.uniform(0.05, 0.15) * np.sin(2 * np.pi * (fx * xx + fy * yy) + r.uniform(0, 6.28))
        img[:, :, c] = acc
    img[10:28, 14:40, 0] += 0.25
    img[30:52, 20:36, 2] -= 0.2
    return np.clip(img, 0.02, 0.98)


def chromatic_pair(seed: int = 7, size: int = 16):
    """(low, ref) pair with hue/saturation margins away from the kinks of
    the hue loss term, for parameter-space finite differencing."""
    r = np.random.default_rng(seed)
    h0 = r.random((size, size)) * 0.9 + 0.02
    s0 = r.random((size, size)) * 0.5 + 0.35
    v0 = r.random((size, size)) * 0.25 + 0.08
    low = hsv_to_rgb(np.stack([h0, s0, v0], axis=-1))
    ref = hsv_to_rgb(
        np.stack([(h0 + 0.12) % 1.0, s0 * 0.75, np.clip(v0 * 3.0, 0, 0.95)], axis=-1)
    )
    return low, ref


def margin_pair(seed: int = 42, size: int = 16):
    """Random (ref, enh) pair whose pixels stay off HSV branch boundaries,
    for pixel-space finite differencing of the losses."""
    r = np.random.default_rng(seed)
    base = r.random((size, size, 3)) * 0.5 + 0.25
    base[:, :, 0] += 0.18
    base[:, :, 2] -= 0.18
    ref = np.clip(base, 0.02, 0.98)
    enh = np.clip(ref + r.normal(0, 0.05, ref.shape), 0.05, 0.95)
    return ref, enh
