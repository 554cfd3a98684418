"""Acceptance suite.

Seven criteria, each printed as one PASS/FAIL line (run with ``-s`` to
see them live). Tolerances are fixed here, not calibrated elsewhere:

1. decomposition identity over 10,000 random patches, <= 1e-9, under 10 s
2. metric axioms: exact maxima / zero, symmetry <= 1e-9, monotone ladders
3. gradient suite: layers < 1e-5, losses < 1e-4 (central differences)
4. fusion recovery < 1e-9, fit-split optimality, shipped-coefficient raw
   value 0.7898 +- 1e-6 on the unit triple
5. quality-model learning: held-out SRCC >= 0.75 on the graded synthetic
   set, frozen backbone, <= 100 epochs, under 15 min
6. 3-loop seeded run (32 pairs, 64x64): exact stage trace, empty pool
   after each loop, mean pseudo-MOS at loop 3 >= loop-0 baseline - 0.01,
   fine-tune losses decrease, under 30 min
7. determinism: byte-identical reports under one seed; abort-and-resume
   equals the uninterrupted run
"""

import os
import time

import numpy as np
import pytest

from conftest import natural_image
from lumina import metrics
from lumina.config import load_config
from lumina.enhance import EnhancerModel
from lumina.fusion import (
    LabeledScoreSet,
    default_fusion_model,
    fit_fusion,
    plcc,
    raw_score,
    srcc,
)
from lumina.imaging import load_image
from lumina.loop import expected_trace, run_loop
from lumina.losses import (
    FidelityConfig,
    JointLossConfig,
    decompose_patch,
    fidelity_loss,
    joint_loss,
    quality_loss,
    ssim_loss,
)
from lumina.manifest import read_manifest, split_by_content
from lumina.metrics import MetricTriple
from lumina.nnet import (
    BilinearFuse,
    Conv3x3,
    FullyConnected,
    GlobalMeanPool,
    GlobalStdPool,
    MaxPool2,
    ReLU,
    Sequential,
    Sigmoid,
    fd_gradient,
    gradient_check,
    rel_err,
)
from lumina.quality import Backbone, IqaTrainConfig, QualityModel, train_iqa
from lumina.synth import add_noise, gaussian_blur, generate_labelled, generate_pairs

SEED = 2024
LOSS_FD_FLOOR = 1e-6  # rel-err denominator floor (FD noise is ~1e-11 absolute)


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# -- 1 ----------------------------------------------------------------------

def test_criterion_1_decomposition_identity():
    rng = np.random.default_rng(SEED)
    t0 = time.time()
    worst_recon = 0.0
    worst_norm = 0.0
    worst_mean = 0.0
    degenerate = 0
    for _ in range(10_000):
        shape = (
            int(rng.integers(1, 13)),
            int(rng.integers(1, 13)),
            int(rng.choice([1, 3])),
        )
        if shape[0] * shape[1] == 1:
            shape = (2, 2, shape[2])
        patch = rng.random(shape)
        d = decompose_patch(patch)
        worst_recon = max(worst_recon, float(np.abs(d.reconstruct() - patch).max()))
        if d.degenerate:
            degenerate += 1
        else:
            worst_norm = max(worst_norm, abs(float(np.linalg.norm(d.structure)) - 1.0))
            centered = d.contrast * d.structure
            worst_mean = max(worst_mean, float(np.abs(centered.mean(axis=(0, 1))).max()))
    elapsed = time.time() - t0
    ok = worst_recon <= 1e-9 and worst_norm <= 1e-9 and worst_mean <= 1e-9 and elapsed < 10.0
    report(
        1,
        ok,
        f"10k patches: recon {worst_recon:.2e}, unit-norm dev {worst_norm:.2e}, "
        f"mean dev {worst_mean:.2e}, {degenerate} degenerate flagged, {elapsed:.1f}s",
    )


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_metric_axioms():
    backbone = Backbone.seeded("desk", seed=7)
    failures = []
    fixtures = [natural_image(s, 64) for s in (3, 17)]

    for img in fixtures:
        if metrics.ssim(img, img) != 1.0:
            failures.append("ssim identity")
        if metrics.msssim(img, img) != 1.0:
            failures.append("msssim identity")
        if metrics.iwssim_v(img, img) != 1.0:
            failures.append("iwssim identity")
        if metrics.fsim(img, img) != 1.0:
            failures.append("fsim identity")
        if metrics.deepsim(img, img, backbone) != 1.0:
            failures.append("deepsim identity")
        if metrics.gmsd(img, img) != 0.0:
            failures.append("gmsd zero")
        if metrics.psnr(img, img) != metrics.PSNR_CAP_DB:
            failures.append("psnr cap")

    img = fixtures[0]
    rng = np.random.default_rng(SEED + 1)
    other = np.clip(img + rng.normal(0, 0.06, img.shape), 0, 1)
    sym_checks = {
        "ssim": metrics.ssim,
        "msssim": metrics.msssim,
        "gmsd": metrics.gmsd,
        "fsim": metrics.fsim,
        "iwssim_v": metrics.iwssim_v,
    }
    for name, fn in sym_checks.items():
        if abs(fn(img, other) - fn(other, img)) > 1e-9:
            failures.append(f"{name} symmetry")
    if abs(metrics.deepsim(img, other, backbone) - metrics.deepsim(other, img, backbone)) > 1e-9:
        failures.append("deepsim symmetry")

    # graded families: noise for similarity metrics, blur for fsim/gmsd
    noise_levels = (0.02, 0.05, 0.1)
    blur_levels = (0.6, 1.2, 2.4)
    for fx_seed in (3, 17):
        fx = natural_image(fx_seed, 64)
        noisy = [add_noise(fx, s, np.random.default_rng(fx_seed)) for s in noise_levels]
        blurred = [gaussian_blur(fx, s) for s in blur_levels]
        for name, fn, seq, increasing in [
            ("ssim", metrics.ssim, noisy, False),
            ("msssim", metrics.msssim, noisy, False),
            ("iwssim_v", metrics.iwssim_v, noisy, False),
            ("deepsim", lambda a, b: metrics.deepsim(a, b, backbone), noisy, False),
            ("psnr", metrics.psnr, noisy, False),
            ("fsim", metrics.fsim, blurred, False),
            ("gmsd", metrics.gmsd, blurred, True),
        ]:
            scores = [fn(fx, d) for d in seq]
            ordered = all(a > b for a, b in zip(scores, scores[1:]))
            if increasing:
                ordered = all(a < b for a, b in zip(scores, scores[1:]))
            if not ordered:
                failures.append(f"{name} monotonicity on fixture {fx_seed}: {scores}")

    report(2, not failures, "identity/symmetry/monotonicity axioms" if not failures else str(failures))


# -- 3 ----------------------------------------------------------------------

def test_criterion_3_gradient_suite():
    t0 = time.time()
    rng = np.random.default_rng(SEED + 2)
    worst_layer = 0.0
    layer_cases = [
        (Sequential([Conv3x3(2, 3, rng=rng)]), rng.standard_normal((2, 6, 6))),
        (Sequential([ReLU()]), rng.standard_normal((2, 5, 5)) + 0.3),
        (Sequential([Sigmoid()]), rng.standard_normal((2, 5, 5))),
        (Sequential([MaxPool2()]), rng.standard_normal((2, 6, 6))),
        (Sequential([FullyConnected(8, 5, rng=rng)]), rng.standard_normal(8)),
        (Sequential([GlobalMeanPool()]), rng.standard_normal((3, 5, 5))),
        (Sequential([GlobalStdPool()]), rng.standard_normal((3, 5, 5))),
    ]
    for net, x in layer_cases:
        r = gradient_check(net, x, tol=1e-5)
        worst_layer = max(worst_layer, r.max_rel_err)

    fuse = BilinearFuse()
    a, b = rng.random(16) + 0.2, rng.random(16) + 0.2
    c = rng.standard_normal(256)
    (ga, gb), _ = fuse.backward((a, b), c)
    fa = fd_gradient(lambda v: float(np.sum(fuse.forward((v, b)) * c)), a.copy())
    fb = fd_gradient(lambda v: float(np.sum(fuse.forward((a, v)) * c)), b.copy())
    worst_layer = max(worst_layer, rel_err(ga, fa), rel_err(gb, fb))

    # losses at 1e-4, including the path through the frozen backbone
    from conftest import margin_pair

    ref, enh = margin_pair(42)
    worst_loss = 0.0
    res = ssim_loss(ref, enh)
    fd = fd_gradient(lambda e: ssim_loss(ref, e).loss, enh.copy())
    worst_loss = max(worst_loss, rel_err(res.grad, fd, floor=LOSS_FD_FLOOR))
    res = fidelity_loss(ref, enh)
    fd = fd_gradient(lambda e: fidelity_loss(ref, e).loss, enh.copy())
    worst_loss = max(worst_loss, rel_err(res.grad, fd, floor=LOSS_FD_FLOOR))

    q_model = QualityModel(Backbone.seeded("tiny", 7), seed=11)
    crop = (np.random.default_rng(SEED + 3).random((8, 8, 3)) * 0.8) + 0.1
    res = quality_loss(crop, q_model)
    fd = fd_gradient(lambda im: quality_loss(im, q_model).loss, crop.copy())
    worst_loss = max(worst_loss, rel_err(res.grad, fd, floor=LOSS_FD_FLOOR))

    ref12, enh12 = margin_pair(6, size=12)
    res = joint_loss(ref12, enh12, q_model)
    fd = fd_gradient(lambda e: joint_loss(ref12, e, q_model).loss, enh12.copy())
    worst_loss = max(worst_loss, rel_err(res.grad, fd, floor=LOSS_FD_FLOOR))

    elapsed = time.time() - t0
    ok = worst_layer < 1e-5 and worst_loss < 1e-4 and elapsed < 300
    report(
        3,
        ok,
        f"layers {worst_layer:.2e} (<1e-5), losses {worst_loss:.2e} (<1e-4), {elapsed:.0f}s",
    )


# -- 4 ----------------------------------------------------------------------

def test_criterion_4_fusion_recovery():
    rng = np.random.default_rng(SEED + 4)
    planted = (0.5, 2.0, -1.0, 0.25)
    triples = [MetricTriple(*rng.random(3)) for _ in range(50)]
    targets = np.array(
        [
            planted[0] + planted[1] * t.fsim + planted[2] * t.iwssim + planted[3] * t.deepsim
            for t in triples
        ]
    )
    model = fit_fusion(LabeledScoreSet(triples, targets))
    recovery = float(np.abs(np.array(model.coeffs) - np.array(planted)).max())

    noisy_targets = targets + rng.normal(0, 0.05, targets.size)
    noisy_model = fit_fusion(LabeledScoreSet(triples, noisy_targets))
    design = LabeledScoreSet(triples, noisy_targets).design_matrix()
    fitted = design @ np.array(noisy_model.coeffs)
    fused_corr = abs(plcc(fitted, noisy_targets))
    optimality = all(
        fused_corr >= abs(plcc(design[:, j], noisy_targets)) - 1e-12 for j in (1, 2, 3)
    )

    raw = raw_score(default_fusion_model(), MetricTriple(1.0, 1.0, 1.0))
    raw_ok = abs(raw - 0.7898) <= 1e-6

    ok = recovery < 1e-9 and optimality and raw_ok
    report(
        4,
        ok,
        f"recovery {recovery:.2e} (<1e-9), fit-split optimality {optimality}, "
        f"unit-triple raw {raw:.6f} (0.7898 +- 1e-6)",
    )


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_quality_model_learning(tmp_path):
    t0 = time.time()
    out = str(tmp_path / "lab")
    manifest = generate_labelled(out, contents=60, seed=SEED, size=64)  # 300 images
    entries = read_manifest(manifest)
    assert len(entries) == 300
    train_e, test_e = split_by_content(entries, 0.2, seed=SEED)
    assert {e.content_id() for e in train_e}.isdisjoint({e.content_id() for e in test_e})

    def load(es):
        imgs = [load_image(os.path.join(out, e.image)) for e in es]
        return imgs, np.array([e.mos for e in es])

    train_imgs, train_labels = load(train_e)
    test_imgs, test_labels = load(test_e)

    backbone = Backbone.seeded("desk", seed=7)
    checksum_before = backbone.checksum()
    model = QualityModel(backbone, seed=11)
    epochs = 30  # <= 100 allowed
    cfg = IqaTrainConfig(batch_size=32, learning_rate=1e-3, epochs=epochs, crop=64)
    curve = train_iqa(model, train_imgs, train_labels, cfg, seed=SEED)
    preds = np.array([model.predict(im).q_o for im in test_imgs])
    score = srcc(preds, test_labels)
    frozen = backbone.checksum() == checksum_before
    elapsed = time.time() - t0
    ok = score >= 0.75 and frozen and epochs <= 100 and elapsed < 900
    report(
        5,
        ok,
        f"held-out SRCC {score:.4f} (>=0.75) after {epochs} epochs, "
        f"backbone frozen {frozen}, loss {curve[0]:.3f}->{curve[-1]:.3f}, {elapsed:.0f}s",
    )


# -- 6 & 7 --------------------------------------------------------------------

# desk-scale overrides; the resolved config is embedded in the run directory
ACCEPT_OVERRIDES = {
    ("run", "seed"): str(SEED),
    ("backbone", "profile"): "desk",
    ("joint", "quality_weight"): "0.3",
    ("iqa", "learning_rate"): "1e-3",
    ("iqa", "epochs"): "30",
    ("iqa", "finetune_epochs"): "50",
    ("iqa", "crop"): "64",
    ("enhancer", "pretrain_epochs"): "20",
    ("enhancer", "finetune_epochs"): "15",
    ("enhancer", "crop"): "64",
    ("loop", "max_loops"): "10",
}


@pytest.fixture(scope="module")
def desk_loop_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance_loop")
    pairs = generate_pairs(str(base / "pairs"), count=32, seed=42, size=64)
    labeled = generate_labelled(str(base / "lab"), contents=30, seed=43, size=64)
    cfg = load_config(None, overrides=ACCEPT_OVERRIDES)
    t0 = time.time()
    state = run_loop(cfg, pairs, labeled, str(base / "run"), loops=3)
    elapsed = time.time() - t0
    return cfg, pairs, labeled, state, elapsed


def test_criterion_6_loop_execution(desk_loop_run):
    from lumina.loop import select_final

    cfg, pairs, labeled, state, elapsed = desk_loop_run
    enh_ckpt, qual_ckpt = select_final(state)  # default: third loop
    assert enh_ckpt.endswith("enhancer_loop3") and os.path.exists(enh_ckpt + ".llw")
    assert qual_ckpt.endswith("quality_loop3")
    trace_ok = state.trace == expected_trace(3)
    rows = {r.loop: r for r in state.rows}
    mos_ok = rows[3].mean_pseudo_mos >= rows[0].mean_pseudo_mos - 0.01
    decreases = []
    for t in (1, 2, 3):
        for phase in ("enhancer", "iqa"):
            curve = state.curves[t][phase]
            decreases.append(curve[-1] < curve[0])
    decreases_ok = all(decreases)
    time_ok = elapsed < 1800
    ok = trace_ok and mos_ok and decreases_ok and time_ok
    report(
        6,
        ok,
        f"trace exact {trace_ok}, pseudo-MOS loop3 {rows[3].mean_pseudo_mos:.4f} vs "
        f"loop0 {rows[0].mean_pseudo_mos:.4f} (-0.01 slack), fine-tune decreases "
        f"{decreases}, {elapsed:.0f}s (<1800)",
    )


def test_criterion_7_determinism_and_resume(tmp_path):
    overrides = {
        **ACCEPT_OVERRIDES,
        ("backbone", "profile"): "tiny",
        ("iqa", "epochs"): "2",
        ("iqa", "finetune_epochs"): "2",
        ("iqa", "crop"): "48",
        ("iqa", "batch_size"): "8",
        ("enhancer", "width"): "8",
        ("enhancer", "blocks"): "2",
        ("enhancer", "pretrain_epochs"): "2",
        ("enhancer", "finetune_epochs"): "2",
        ("enhancer", "crop"): "48",
        ("enhancer", "batch_size"): "8",
    }
    cfg = load_config(None, overrides=overrides)
    pairs = generate_pairs(str(tmp_path / "p"), count=8, seed=SEED, size=48)
    labeled = generate_labelled(str(tmp_path / "l"), contents=3, seed=SEED, size=48)

    s1 = run_loop(cfg, pairs, labeled, str(tmp_path / "a"), loops=2)
    s2 = run_loop(cfg, pairs, labeled, str(tmp_path / "b"), loops=2)
    with open(os.path.join(str(tmp_path / "a"), "loop_report.tsv"), "rb") as f:
        bytes_a = f.read()
    with open(os.path.join(str(tmp_path / "b"), "loop_report.tsv"), "rb") as f:
        bytes_b = f.read()
    deterministic = bytes_a == bytes_b

    run_loop(cfg, pairs, labeled, str(tmp_path / "c"), loops=1)  # abort after loop 1
    s3 = run_loop(cfg, pairs, labeled, str(tmp_path / "c"), loops=2)  # resume
    with open(os.path.join(str(tmp_path / "c"), "loop_report.tsv"), "rb") as f:
        bytes_c = f.read()
    resumed = bytes_c == bytes_a

    ok = deterministic and resumed
    report(7, ok, f"byte-identical reports {deterministic}, abort/resume equal {resumed}")
