"""Patch decomposition and the differentiable losses, with every
gradient checked against central finite differences (h = 1e-5).

Finite differencing of a piecewise-smooth loss is only meaningful away
from its kinks (hue sign flips, saturation-gate ties, ReLU zeros), so
the random fixtures keep margins from those sets; see conftest.
"""

import numpy as np
import pytest

from conftest import margin_pair
from lumina import losses
from lumina.errors import PreconditionError, ShapeMismatchError
from lumina.imaging import hsv_to_rgb
from lumina.losses import (
    FidelityConfig,
    JointLossConfig,
    decompose_patch,
    fidelity_loss,
    joint_loss,
    quality_loss,
    ssim_loss,
)
from lumina.nnet import fd_gradient, rel_err
from lumina.quality import Backbone, QualityModel

LOSS_FLOOR = 1e-6  # rel-err denominator floor: FD noise is ~1e-11 absolute


@pytest.fixture(scope="module")
def tiny_quality_model():
    return QualityModel(Backbone.seeded("tiny", seed=7), seed=11)


class TestDecomposition:
    def test_reconstruction_identity_random_patches(self, rng):
        for _ in range(200):
            shape = (int(rng.integers(1, 9)), int(rng.integers(2, 9)), int(rng.choice([1, 3])))
            patch = rng.random(shape)
            d = decompose_patch(patch)
            assert np.abs(d.reconstruct() - patch).max() < 1e-9
            if not d.degenerate:
                assert abs(np.linalg.norm(d.structure) - 1.0) < 1e-9
                centered = d.contrast * d.structure
                assert np.abs(centered.mean(axis=(0, 1))).max() < 1e-9

    def test_constant_gray_patch_is_degenerate(self):
        d = decompose_patch(np.full((4, 4, 3), 0.5))
        assert d.degenerate
        assert d.contrast == 0.0
        assert (d.mu_h, d.mu_s, d.mu_v) == (0.0, 0.0, 0.5)
        assert np.array_equal(d.structure, np.zeros((4, 4, 3)))

    def test_two_pixel_patch_hand_values(self):
        d = decompose_patch(np.array([[0.0, 1.0]])[:, :, None])
        assert d.mean_color[0] == 0.5
        assert d.contrast == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert d.structure.ravel() == pytest.approx([-1 / np.sqrt(2), 1 / np.sqrt(2)], abs=1e-12)

    def test_empty_patch_rejected(self):
        with pytest.raises(PreconditionError):
            decompose_patch(np.zeros((0, 3, 3)))


class TestFidelityLoss:
    def test_identical_images_zero_loss(self):
        ref, _ = margin_pair(1)
        res = fidelity_loss(ref, ref)
        assert res.loss == pytest.approx(0.0, abs=1e-9)
        assert res.parts["structure"] == pytest.approx(0.0, abs=1e-9)
        assert res.parts["hue"] == 0.0

    def test_loss_is_nonnegative(self, rng):
        for seed in range(3):
            ref, enh = margin_pair(seed)
            assert fidelity_loss(ref, enh).loss >= 0.0

    def test_global_hue_rotation_fixture(self):
        # hue plane rotated a quarter turn between near-isoluminant hues:
        # structure term stays small, hue term is large
        r = np.random.default_rng(5)
        v = r.random((32, 32)) * 0.5 + 0.3
        h_a = np.full_like(v, 0.08)
        h_b = np.full_like(v, 0.33)
        s = np.full_like(v, 0.9)
        ref = hsv_to_rgb(np.stack([h_a, s, v], axis=-1))
        enh = hsv_to_rgb(np.stack([h_b, s, v], axis=-1))
        res = fidelity_loss(ref, enh)
        assert res.parts["structure"] < 0.1
        assert res.parts["hue"] > 0.1

    def test_gradient_matches_finite_differences(self):
        ref, enh = margin_pair(42)
        res = fidelity_loss(ref, enh)
        fd = fd_gradient(lambda e: fidelity_loss(ref, e).loss, enh.copy())
        assert rel_err(res.grad, fd, floor=LOSS_FLOOR) < 1e-4

    def test_structure_term_invariant_to_luminance_shift(self):
        ref, enh = margin_pair(7)
        enh = enh * 0.8 + 0.02  # headroom so the +0.08 shift cannot clip
        base = fidelity_loss(ref, enh).parts["structure"]
        shifted = fidelity_loss(ref, enh + 0.08).parts["structure"]
        assert abs(base - shifted) < 1e-6

    def test_shape_and_channel_preconditions(self):
        ref, enh = margin_pair(1)
        with pytest.raises(ShapeMismatchError):
            fidelity_loss(ref, enh[:-1])
        with pytest.raises(ShapeMismatchError):
            fidelity_loss(ref[:, :, :1], enh[:, :, :1])
        with pytest.raises(PreconditionError):
            fidelity_loss(ref[:8, :8], enh[:8, :8])


class TestQualityLoss:
    def test_score_at_maximum_gives_zero(self):
        class Stub:
            def predict_with_input_grad(self, img):
                from lumina.quality import QualityScores

                return QualityScores(1.0, 1.0, 1.0), np.zeros_like(img)

        res = quality_loss(np.zeros((8, 8, 3)), Stub(), JointLossConfig(q_max=1.0))
        assert res.loss == 0.0

    def test_arithmetic(self):
        class Stub:
            def predict_with_input_grad(self, img):
                from lumina.quality import QualityScores

                return QualityScores(0.3, 0.3, 0.3), np.ones_like(img)

        res = quality_loss(np.zeros((8, 8, 3)), Stub(), JointLossConfig(q_max=1.0))
        assert res.loss == pytest.approx(0.7, abs=1e-12)
        assert np.all(res.grad == -1.0)  # pushes the score upward

    def test_pixel_gradient_matches_finite_differences(self, rng, tiny_quality_model):
        img = rng.random((8, 8, 3)) * 0.8 + 0.1
        res = quality_loss(img, tiny_quality_model)
        fd = fd_gradient(lambda im: quality_loss(im, tiny_quality_model).loss, img.copy())
        assert rel_err(res.grad, fd, floor=LOSS_FLOOR) < 1e-4

    def test_missing_model_rejected(self):
        with pytest.raises(PreconditionError):
            quality_loss(np.zeros((8, 8, 3)), None)


class TestJointLoss:
    def test_zero_weight_equals_fidelity(self, tiny_quality_model):
        ref, enh = margin_pair(3)
        jcfg = JointLossConfig(quality_weight=0.0)
        joint = joint_loss(ref, enh, None, jcfg=jcfg)
        fid = fidelity_loss(ref, enh)
        assert joint.loss == fid.loss
        assert np.array_equal(joint.grad, fid.grad)

    def test_additivity_of_components(self, tiny_quality_model):
        ref, enh = margin_pair(4)
        jcfg = JointLossConfig(quality_weight=1.0)
        joint = joint_loss(ref, enh, tiny_quality_model, jcfg=jcfg)
        fid = fidelity_loss(ref, enh)
        qua = quality_loss(enh, tiny_quality_model, jcfg)
        assert joint.loss == pytest.approx(fid.loss + qua.loss, abs=1e-12)
        assert np.abs(joint.grad - (fid.grad + qua.grad)).max() < 1e-12

    def test_weight_rescales_quality_component_exactly(self, tiny_quality_model):
        ref, enh = margin_pair(5)
        j1 = joint_loss(ref, enh, tiny_quality_model, jcfg=JointLossConfig(quality_weight=1.0))
        j2 = joint_loss(ref, enh, tiny_quality_model, jcfg=JointLossConfig(quality_weight=2.0))
        assert j2.parts["fidelity"] == j1.parts["fidelity"]
        assert j2.loss - j2.parts["fidelity"] == pytest.approx(
            2.0 * (j1.loss - j1.parts["fidelity"]), rel=1e-12
        )

    def test_gradient_matches_finite_differences(self, tiny_quality_model):
        ref, enh = margin_pair(6, size=12)
        res = joint_loss(ref, enh, tiny_quality_model)
        fd = fd_gradient(
            lambda e: joint_loss(ref, e, tiny_quality_model).loss, enh.copy()
        )
        assert rel_err(res.grad, fd, floor=LOSS_FLOOR) < 1e-4


class TestSsimLoss:
    def test_identical_images_zero(self):
        ref, _ = margin_pair(8)
        assert ssim_loss(ref, ref).loss == pytest.approx(0.0, abs=1e-12)

    def test_range_bound(self, rng):
        for seed in range(3):
            ref, enh = margin_pair(seed, size=16)
            assert 0.0 <= ssim_loss(ref, enh).loss <= 2.0

    def test_gradient_matches_finite_differences(self):
        ref, enh = margin_pair(42)
        res = ssim_loss(ref, enh)
        fd = fd_gradient(lambda e: ssim_loss(ref, e).loss, enh.copy())
        assert rel_err(res.grad, fd, floor=LOSS_FLOOR) < 1e-4

    def test_single_channel_supported(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        res = ssim_loss(a, b)
        assert res.grad.shape == (16, 16)
