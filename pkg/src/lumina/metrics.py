"""Full-reference image quality metric registry.

PSNR, SSIM, multi-scale SSIM, gradient-magnitude similarity deviation,
a phase-congruency feature similarity, an information-weighted SSIM
variant (``iwssim_v``, simplified log-energy weights), and a deep
feature-statistics similarity (``deepsim``). All metrics except
``deepsim`` operate on the luma plane; ``deepsim`` consumes RGB through
a frozen feature extractor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ShapeMismatchError
from .imaging import convolve_valid, downsample2, gaussian_window, luminance

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MSSSIM_EXPONENTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
GMSD_C = 170.0 / 255.0**2
IWSSIM_CW = 1e-3
PSNR_CAP_DB = 99.0

_PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
_PREWITT_Y = _PREWITT_X.T
_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
_SCHARR_Y = _SCHARR_X.T


@dataclass
class MetricScore:
    metric: str
    value: float
    meta: dict = field(default_factory=dict)


@dataclass
class MetricTriple:
    """The three fused full-reference scores (feature similarity,
    information-weighted SSIM variant, deep-feature similarity)."""

    fsim: float
    iwssim: float
    deepsim: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fsim, self.iwssim, self.deepsim])


def _check_pair(ref: np.ndarray, test: np.ndarray) -> None:
    if ref.shape != test.shape:
        raise ShapeMismatchError(f"image shapes differ: {ref.shape} vs {test.shape}")


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """10*log10(1/MSE) on the [0,1] scale, capped at 99 dB."""
    _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


# ---------------------------------------------------------------------------
# SSIM family
# ---------------------------------------------------------------------------

def _ssim_maps(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    """Per-window luminance and contrast-structure factor maps."""
    mu_a = convolve_valid(a, kernel)
    mu_b = convolve_valid(b, kernel)
    var_a = convolve_valid(a * a, kernel) - mu_a * mu_a
    var_b = convolve_valid(b * b, kernel) - mu_b * mu_b
    cov = convolve_valid(a * b, kernel) - mu_a * mu_b
    l_map = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a**2 + mu_b**2 + SSIM_C1)
    cs_map = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return l_map, cs_map, var_a, var_b


def ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM of two 2-D planes (11x11 Gaussian window, sigma 1.5)."""
    if min(a.shape) < SSIM_WINDOW:
        raise PreconditionError(
            f"image min side {min(a.shape)} smaller than SSIM window {SSIM_WINDOW}"
        )
    kernel = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    l_map, cs_map, _, _ = _ssim_maps(a, b, kernel)
    return float(np.mean(l_map * cs_map))


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Luma-plane SSIM."""
    _check_pair(ref, test)
    return ssim_plane(luminance(ref), luminance(test))


def _feasible_scales(min_side: int, requested: int = 5) -> int:
    scales = 0
    side = min_side
    while scales < requested and side >= SSIM_WINDOW:
        scales += 1
        side //= 2
    return scales


def _multiscale(ref, test, weighted_finest: bool):
    """Shared MS-SSIM / iwssim_v skeleton; returns (score, used scale count)."""
    _check_pair(ref, test)
    a, b = luminance(ref), luminance(test)
    n_scales = _feasible_scales(min(a.shape))
    if n_scales == 0:
        raise PreconditionError("image too small for even one scale")
    kernel = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    weights = np.array(MSSSIM_EXPONENTS[:n_scales])
    weights = weights / weights.sum() if n_scales < 5 else weights
    score = 1.0
    for j in range(n_scales):
        l_map, cs_map, var_a, var_b = _ssim_maps(a, b, kernel)
        last = j == n_scales - 1
        pool = l_map * cs_map if last else cs_map
        if weighted_finest and j == 0:
            w = np.log1p((var_a + var_b) / IWSSIM_CW)
            total = float(w.sum())
            term = float((pool * w).sum() / total) if total > 1e-12 else float(pool.mean())
        else:
            term = float(pool.mean())
        score *= max(term, 0.0) ** weights[j]
        if not last:
            a, b = downsample2(a), downsample2(b)
    return float(score), n_scales


def msssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Multi-scale SSIM, up to 5 scales with the standard exponents.

    Undersized images fall back to the largest feasible scale count with
    renormalized exponents (reported in the registry's score metadata).
    """
    return _multiscale(ref, test, weighted_finest=False)[0]


def iwssim_v(ref: np.ndarray, test: np.ndarray) -> float:
    """MS-SSIM with information-content weighting of the finest scale.

    Weights are log(1 + (var_r + var_e)/C_w); all-zero weights (constant
    images) fall back to uniform pooling.
    """
    return _multiscale(ref, test, weighted_finest=True)[0]


# ---------------------------------------------------------------------------
# GMSD
# ---------------------------------------------------------------------------

def gmsd(ref: np.ndarray, test: np.ndarray) -> float:
    """Standard deviation of the Prewitt gradient-magnitude similarity map."""
    _check_pair(ref, test)
    a, b = luminance(ref), luminance(test)
    if min(a.shape) < 3:
        raise PreconditionError("image too small for 3x3 gradients")
    ga = np.sqrt(convolve_valid(a, _PREWITT_X) ** 2 + convolve_valid(a, _PREWITT_Y) ** 2)
    gb = np.sqrt(convolve_valid(b, _PREWITT_X) ** 2 + convolve_valid(b, _PREWITT_Y) ** 2)
    gms = (2.0 * ga * gb + GMSD_C) / (ga**2 + gb**2 + GMSD_C)
    return float(gms.std())


# ---------------------------------------------------------------------------
# phase-congruency feature similarity
# ---------------------------------------------------------------------------

def _lowpass(radius: np.ndarray, cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    return 1.0 / (1.0 + (radius / cutoff) ** (2 * order))


def phase_congruency(
    plane: np.ndarray,
    nscale: int = 4,
    norient: int = 4,
    min_wavelength: float = 6.0,
    mult: float = 2.0,
    sigma_f: float = 0.55,
    d_theta_on_sigma: float = 1.2,
    k: float = 2.0,
    eps: float = 1e-4,
) -> np.ndarray:
    """Phase congruency map from a log-Gabor filter bank (frequency domain).

    Even/odd responses per scale and orientation; local energy minus an
    estimated noise floor, normalized by the summed response amplitude.
    """
    rows, cols = plane.shape
    imfft = np.fft.fft2(plane)
    u = np.fft.fftfreq(cols)
    v = np.fft.fftfreq(rows)
    uu, vv = np.meshgrid(u, v)
    radius = np.sqrt(uu**2 + vv**2)
    radius[0, 0] = 1.0
    theta = np.arctan2(-vv, uu)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    lp = _lowpass(radius)

    log_gabor = []
    for s in range(nscale):
        f0 = 1.0 / (min_wavelength * mult**s)
        g = np.exp(-(np.log(radius / f0) ** 2) / (2.0 * np.log(sigma_f) ** 2)) * lp
        g[0, 0] = 0.0
        log_gabor.append(g)

    theta_sigma = np.pi / norient / d_theta_on_sigma
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(norient):
        angle = o * np.pi / norient
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2.0 * theta_sigma**2))

        eo = []
        ifft_filters = []
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        em_n = 0.0
        for s in range(nscale):
            filt = log_gabor[s] * spread
            resp = np.fft.ifft2(imfft * filt)
            eo.append(resp)
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            sum_e += resp.real
            sum_o += resp.imag
            sum_an += np.abs(resp)
            if s == 0:
                em_n = float(np.sum(filt**2))
        x_energy = np.sqrt(sum_e**2 + sum_o**2) + eps
        mean_e, mean_o = sum_e / x_energy, sum_o / x_energy
        energy = np.zeros((rows, cols))
        for resp in eo:
            energy += resp.real * mean_e + resp.imag * mean_o
            energy -= np.abs(resp.real * mean_o - resp.imag * mean_e)

        # noise floor from the smallest-scale response (Rayleigh model)
        median_e2n = float(np.median(np.abs(eo[0]) ** 2))
        mean_e2n = median_e2n / np.log(2.0)
        noise_power = mean_e2n / em_n if em_n > 0 else 0.0
        est_sum_an2 = np.zeros((rows, cols))
        for f in ifft_filters:
            est_sum_an2 += f**2
        est_sum_aiaj = np.zeros((rows, cols))
        for i in range(nscale - 1):
            for j in range(i + 1, nscale):
                est_sum_aiaj += ifft_filters[i] * ifft_filters[j]
        est_noise_energy2 = 2.0 * noise_power * est_sum_an2.sum() + 4.0 * noise_power * est_sum_aiaj.sum()
        tau = np.sqrt(max(est_noise_energy2, 0.0) / 2.0)
        noise_energy = tau * np.sqrt(np.pi / 2.0)
        noise_sigma = np.sqrt((2.0 - np.pi / 2.0) * tau**2)
        t = (noise_energy + k * noise_sigma) / 1.7
        energy_all += np.maximum(energy - t, 0.0)
        an_all += sum_an
    return energy_all / (an_all + eps)


def fsim(ref: np.ndarray, test: np.ndarray, t_pc: float = 0.85, t_g: float = 160.0 / 255.0**2) -> float:
    """Feature similarity on the luma plane: phase congruency combined
    with Scharr gradient magnitude, pooled by max phase congruency."""
    _check_pair(ref, test)
    a, b = luminance(ref), luminance(test)
    if min(a.shape) < 32:
        raise PreconditionError("feature similarity needs min side >= 32")
    pc_a = phase_congruency(a)
    pc_b = phase_congruency(b)
    ga = np.sqrt(convolve_valid(a, _SCHARR_X) ** 2 + convolve_valid(a, _SCHARR_Y) ** 2)
    gb = np.sqrt(convolve_valid(b, _SCHARR_X) ** 2 + convolve_valid(b, _SCHARR_Y) ** 2)
    pc_a, pc_b = pc_a[1:-1, 1:-1], pc_b[1:-1, 1:-1]  # crop to gradient interior
    s_pc = (2.0 * pc_a * pc_b + t_pc) / (pc_a**2 + pc_b**2 + t_pc)
    s_g = (2.0 * ga * gb + t_g) / (ga**2 + gb**2 + t_g)
    s_l = s_pc * s_g
    pcm = np.maximum(pc_a, pc_b)
    total = float(pcm.sum())
    if total <= 1e-12:
        return float(s_l.mean())
    return float((s_l * pcm).sum() / total)


# ---------------------------------------------------------------------------
# deep feature-statistics similarity
# ---------------------------------------------------------------------------

def deepsim(ref: np.ndarray, test: np.ndarray, backbone, c1: float = 1e-6, c2: float = 1e-6) -> float:
    """Mean/std feature-statistics similarity through a frozen extractor.

    For every tap and channel: the product of a mean-similarity and a
    std-similarity factor, averaged over all channels of all taps.
    """
    _check_pair(ref, test)
    if backbone is None:
        raise PreconditionError("deepsim requires a loaded feature backbone")
    sims = []
    for fa, fb in zip(backbone.feature_maps(ref), backbone.feature_maps(test)):
        mu_a, mu_b = fa.mean(axis=(1, 2)), fb.mean(axis=(1, 2))
        sd_a, sd_b = fa.std(axis=(1, 2)), fb.std(axis=(1, 2))
        s_mu = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
        s_sd = (2.0 * sd_a * sd_b + c2) / (sd_a**2 + sd_b**2 + c2)
        sims.append(s_mu * s_sd)
    return float(np.concatenate(sims).mean())


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

REGISTRY = {
    "psnr": dict(fn=psnr, needs_backbone=False, higher_better=True),
    "ssim": dict(fn=ssim, needs_backbone=False, higher_better=True),
    "msssim": dict(fn=msssim, needs_backbone=False, higher_better=True),
    "gmsd": dict(fn=gmsd, needs_backbone=False, higher_better=False),
    "fsim": dict(fn=fsim, needs_backbone=False, higher_better=True),
    "iwssim_v": dict(fn=iwssim_v, needs_backbone=False, higher_better=True),
    "deepsim": dict(fn=deepsim, needs_backbone=True, higher_better=True),
}


def compute_metric(metric_id: str, ref, test, backbone=None) -> MetricScore:
    if metric_id not in REGISTRY:
        raise PreconditionError(
            f"unknown metric {metric_id!r}; known: {sorted(REGISTRY)}"
        )
    entry = REGISTRY[metric_id]
    meta = {}
    if metric_id in ("msssim", "iwssim_v"):
        value, scales = _multiscale(ref, test, weighted_finest=(metric_id == "iwssim_v"))
        if scales < 5:
            meta["scales"] = scales
    elif entry["needs_backbone"]:
        value = entry["fn"](ref, test, backbone)
    else:
        value = entry["fn"](ref, test)
    return MetricScore(metric_id, float(value), meta)


def metric_triple(ref, test, backbone) -> MetricTriple:
    """The (fsim, iwssim_v, deepsim) operand triple for score fusion."""
    return MetricTriple(
        fsim=fsim(ref, test),
        iwssim=iwssim_v(ref, test),
        deepsim=deepsim(ref, test, backbone),
    )
