"""Differentiable image losses for enhancement training.

A patch decomposition into contrast / structure / mean-color-HSV
components, a structure+hue fidelity loss, a no-reference quality loss
through a frozen scoring model, their weighted joint sum, and a
windowed SSIM loss. Every loss returns its analytic gradient with
respect to the enhanced image; all of them are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import corr2_scatter
from .errors import PreconditionError, ShapeMismatchError
from .imaging import LUMA_WEIGHTS, convolve_valid, gaussian_window, image_to_hsv, rgb_to_hsv
from .metrics import SSIM_C1, SSIM_C2

DEFAULT_STABILIZER = 9e-4  # structure-term constant of the fidelity loss


# ---------------------------------------------------------------------------
# patch decomposition
# ---------------------------------------------------------------------------

@dataclass
class PatchDecomposition:
    """x = contrast * structure + mean_color, with the mean color further
    read out as (hue, saturation, value)."""

    contrast: float
    structure: np.ndarray
    mean_color: np.ndarray
    mu_h: float
    mu_s: float
    mu_v: float
    degenerate: bool

    def reconstruct(self) -> np.ndarray:
        return self.contrast * self.structure + self.mean_color


def decompose_patch(patch: np.ndarray) -> PatchDecomposition:
    """Split a patch into zero-mean unit-norm structure, its scale, and
    the per-channel mean color.

    A constant patch has zero contrast; its structure is the zero signal
    and the result is flagged degenerate rather than raising.
    """
    a = np.asarray(patch, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.size == 0:
        raise PreconditionError("empty patch")
    mean_color = a.mean(axis=(0, 1))
    centered = a - mean_color
    contrast = float(np.linalg.norm(centered))
    if contrast > 0.0:
        structure = centered / contrast
        degenerate = False
    else:
        structure = np.zeros_like(a)
        degenerate = True
    if a.shape[2] == 3:
        mu_h, mu_s, mu_v = rgb_to_hsv(mean_color)
    else:
        mu_h, mu_s, mu_v = 0.0, 0.0, float(mean_color[0])
    return PatchDecomposition(
        contrast, structure, mean_color, float(mu_h), float(mu_s), float(mu_v), degenerate
    )


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass
class FidelityConfig:
    window_size: int = 11
    window_sigma: float = 1.5
    stabilizer: float = DEFAULT_STABILIZER
    hue_weight: float = 1.0
    gate_exponent: float = 1.0

    def __post_init__(self):
        if self.stabilizer <= 0:
            raise PreconditionError("stabilizer must be positive")


@dataclass
class JointLossConfig:
    quality_weight: float = 1.0  # weight of the quality term
    q_max: float = 1.0           # best score the quality model can emit

    def __post_init__(self):
        if self.quality_weight < 0 or not np.isfinite(self.q_max):
            raise PreconditionError("bad joint loss config")


# ---------------------------------------------------------------------------
# HSV partial derivatives (hexcone, matching imaging.rgb_to_hsv branches)
# ---------------------------------------------------------------------------

def _hsv_with_partials(img: np.ndarray):
    """Per-pixel (h, s) plus their partial derivatives w.r.t. r, g, b.

    Achromatic pixels (max == min) and black pixels get zero partials;
    branch choices at ties follow the r-then-g-then-b convention of the
    forward conversion.
    """
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    v = np.maximum(np.maximum(r, g), b)
    m = np.minimum(np.minimum(r, g), b)
    c = v - m
    chromatic = c > 0.0
    lit = v > 0.0
    safe_c = np.where(chromatic, c, 1.0)
    safe_v = np.where(lit, v, 1.0)

    is_rmax = v == r
    is_gmax = ~is_rmax & (v == g)
    is_bmax = ~(is_rmax | is_gmax)
    is_rmin = m == r
    is_gmin = ~is_rmin & (m == g)
    is_bmin = ~(is_rmin | is_gmin)

    h6 = np.where(
        is_rmax, ((g - b) / safe_c) % 6.0, np.where(is_gmax, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0)
    )
    h = np.where(chromatic, h6 / 6.0, 0.0) % 1.0
    s = np.where(lit, c / safe_v, 0.0)

    # numerator n of the active hue sector and its channel partials
    n = np.where(is_rmax, g - b, np.where(is_gmax, b - r, r - g))
    dn = np.stack(
        [
            np.where(is_rmax, 0.0, np.where(is_gmax, -1.0, 1.0)),
            np.where(is_rmax, 1.0, np.where(is_gmax, 0.0, -1.0)),
            np.where(is_rmax, -1.0, np.where(is_gmax, 1.0, 0.0)),
        ],
        axis=-1,
    )
    emax = np.stack([is_rmax, is_gmax, is_bmax], axis=-1).astype(np.float64)
    emin = np.stack([is_rmin, is_gmin, is_bmin], axis=-1).astype(np.float64)
    dc = emax - emin

    live = (chromatic & lit)[:, :, None]
    dh = np.where(live, (dn * safe_c[:, :, None] - n[:, :, None] * dc) / (6.0 * safe_c[:, :, None] ** 2), 0.0)
    ds = np.where(
        live,
        emax * (m / safe_v**2)[:, :, None] - emin / safe_v[:, :, None],
        0.0,
    )
    return h, s, dh, ds


# ---------------------------------------------------------------------------
# windowed structure similarity: maps and adjoint
# ---------------------------------------------------------------------------

def _local_moments(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    mu_a = convolve_valid(a, kernel)
    mu_b = convolve_valid(b, kernel)
    var_a = convolve_valid(a * a, kernel) - mu_a**2
    var_b = convolve_valid(b * b, kernel) - mu_b**2
    cov = convolve_valid(a * b, kernel) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _structure_term_grad(ref_p, enh_p, kernel, c):
    """Mean of S = (2*cov + c)/(var_r + var_e + c) over valid windows and
    its gradient w.r.t. the enhanced plane."""
    mu_r, mu_e, var_r, var_e, cov = _local_moments(ref_p, enh_p, kernel)
    b2 = var_r + var_e + c
    s_map = (2.0 * cov + c) / b2
    n = s_map.size
    # d mean(S)/d e(p) = [ r*scat(2/B) - scat(2 mu_r/B) - e*scat(2S/B) + scat(2 S mu_e/B) ] / n
    f1 = corr2_scatter(2.0 / b2, kernel)
    f2 = corr2_scatter(2.0 * mu_r / b2, kernel)
    f3 = corr2_scatter(2.0 * s_map / b2, kernel)
    f4 = corr2_scatter(2.0 * s_map * mu_e / b2, kernel)
    grad = (ref_p * f1 - f2 - enh_p * f3 + f4) / n
    return float(s_map.mean()), grad


def _ssim_plane_grad(ref_p, enh_p, kernel):
    """Mean full SSIM (luminance * contrast-structure factors) of two
    planes and its gradient w.r.t. the enhanced plane."""
    mu_r, mu_e, var_r, var_e, cov = _local_moments(ref_p, enh_p, kernel)
    a1 = 2.0 * mu_r * mu_e + SSIM_C1
    b1 = mu_r**2 + mu_e**2 + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b2 = var_r + var_e + SSIM_C2
    l_map, cs_map = a1 / b1, a2 / b2
    n = l_map.size
    t1 = corr2_scatter(2.0 * cs_map * (mu_r - l_map * mu_e) / b1, kernel)
    f1 = corr2_scatter(2.0 * l_map / b2, kernel)
    f2 = corr2_scatter(2.0 * l_map * mu_r / b2, kernel)
    f3 = corr2_scatter(2.0 * l_map * cs_map / b2, kernel)
    f4 = corr2_scatter(2.0 * l_map * cs_map * mu_e / b2, kernel)
    grad = (t1 + ref_p * f1 - f2 - enh_p * f3 + f4) / n
    return float((l_map * cs_map).mean()), grad


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    parts: dict = field(default_factory=dict)


def _require_pair(ref, enh, min_side):
    if ref.shape != enh.shape:
        raise ShapeMismatchError(f"image shapes differ: {ref.shape} vs {enh.shape}")
    if min(ref.shape[0], ref.shape[1]) < min_side:
        raise PreconditionError(f"image min side below {min_side}")


def fidelity_loss(ref: np.ndarray, enh: np.ndarray, cfg: FidelityConfig | None = None) -> LossResult:
    """Structure + hue fidelity: (1 - mean windowed structure similarity
    of the luma planes) plus the mean saturation-gated circular hue
    distance. Returns the loss and its gradient w.r.t. ``enh``.
    """
    cfg = cfg or FidelityConfig()
    _require_pair(ref, enh, cfg.window_size)
    if ref.ndim != 3 or ref.shape[2] != 3:
        raise ShapeMismatchError("fidelity loss needs 3-channel images")
    kernel = gaussian_window(cfg.window_size, cfg.window_sigma)

    s_mean, s_grad_luma = _structure_term_grad(
        ref @ LUMA_WEIGHTS, enh @ LUMA_WEIGHTS, kernel, cfg.stabilizer
    )
    grad = -s_grad_luma[:, :, None] * LUMA_WEIGHTS[None, None, :]

    h_ref, s_ref, _, _ = _hsv_with_partials(ref)
    h_enh, s_enh, dh_enh, ds_enh = _hsv_with_partials(enh)
    delta = (h_enh - h_ref + 0.5) % 1.0 - 0.5
    dist = np.abs(delta)
    gate = np.minimum(s_ref, s_enh)
    gamma = cfg.gate_exponent
    gate_pow = gate**gamma
    hue_map = dist * gate_pow
    n_pix = hue_map.size
    d_dist = np.sign(delta)
    enh_gates = (s_enh < s_ref).astype(np.float64)
    if gamma == 1.0:
        d_gate = np.ones_like(gate)
    else:
        safe_gate = np.where(gate > 0.0, gate, 1.0)
        d_gate = np.where(gate > 0.0, gamma * safe_gate ** (gamma - 1.0), 0.0)
    hue_grad = (
        (d_dist * gate_pow)[:, :, None] * dh_enh
        + (dist * d_gate * enh_gates)[:, :, None] * ds_enh
    ) / n_pix
    grad += cfg.hue_weight * hue_grad

    structure_term = 1.0 - s_mean
    hue_term = float(hue_map.mean())
    loss = structure_term + cfg.hue_weight * hue_term
    return LossResult(loss, grad, {"structure": structure_term, "hue": hue_term})


def quality_loss(enh: np.ndarray, q_model, cfg: JointLossConfig | None = None) -> LossResult:
    """L1 distance of the model's overall score from its maximum,
    with the pixel gradient propagated through the frozen extractor."""
    cfg = cfg or JointLossConfig()
    if q_model is None:
        raise PreconditionError("quality loss requires a scoring model")
    scores, q_grad = q_model.predict_with_input_grad(enh)
    diff = cfg.q_max - scores.q_o
    loss = abs(diff)
    grad = -np.sign(diff) * q_grad
    return LossResult(float(loss), grad, {"q_o": scores.q_o})


def joint_loss(
    ref: np.ndarray,
    enh: np.ndarray,
    q_model,
    fcfg: FidelityConfig | None = None,
    jcfg: JointLossConfig | None = None,
) -> LossResult:
    """Fidelity plus weighted quality; gradients sum."""
    jcfg = jcfg or JointLossConfig()
    fid = fidelity_loss(ref, enh, fcfg)
    if jcfg.quality_weight == 0.0:
        return LossResult(fid.loss, fid.grad, {"fidelity": fid.loss, "quality": 0.0})
    qua = quality_loss(enh, q_model, jcfg)
    loss = fid.loss + jcfg.quality_weight * qua.loss
    grad = fid.grad + jcfg.quality_weight * qua.grad
    return LossResult(float(loss), grad, {"fidelity": fid.loss, "quality": qua.loss})


def ssim_loss(ref: np.ndarray, enh: np.ndarray) -> LossResult:
    """1 - mean over channels of per-channel windowed SSIM."""
    _require_pair(ref, enh, 11)
    kernel = gaussian_window(11, 1.5)
    ref3 = ref[:, :, None] if ref.ndim == 2 else ref
    enh3 = enh[:, :, None] if enh.ndim == 2 else enh
    channels = ref3.shape[2]
    total = 0.0
    grad = np.zeros_like(enh3)
    for c in range(channels):
        val, g = _ssim_plane_grad(ref3[:, :, c], enh3[:, :, c], kernel)
        total += val
        grad[:, :, c] = -g / channels
    loss = 1.0 - total / channels
    return LossResult(float(loss), grad if enh.ndim == 3 else grad[:, :, 0])
