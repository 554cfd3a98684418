"""Command-line surface.

Verbs: score, synth, synth-labelled, fit-fusion, train-iqa,
train-enhancer, run-loop, eval, bench. Exit codes: 0 success, 2 for
I/O problems, 3 for violated preconditions or bad configuration.
Worker count is capped by the LUMINA_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import loop as loop_mod
from . import synth as synth_mod
from .config import RunConfig, load_config, save_resolved
from .enhance import EnhancerModel, pretrain
from .errors import (
    ConfigError,
    ImageIOError,
    LuminaError,
    ManifestError,
    WeightsFileError,
)
from .fusion import (
    LabeledScoreSet,
    apply_fusion,
    default_fusion_model,
    fit_fusion,
    load_fusion_model,
    plcc,
    save_fusion_model,
    srcc,
)
from .imaging import load_image
from .manifest import load_labeled, load_pairs, read_manifest, split_by_content
from .metrics import REGISTRY, compute_metric, metric_triple
from .quality import Backbone, QualityModel, train_iqa


def _config_from(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _backbone_from(cfg: RunConfig) -> Backbone:
    if cfg.backbone_weights:
        return Backbone.from_file(cfg.backbone_weights, cfg.backbone_profile)
    return Backbone.seeded(cfg.backbone_profile, cfg.backbone_seed)


def _fusion_from(cfg: RunConfig, path: str | None = None):
    if path:
        return load_fusion_model(path)
    if cfg.fusion_model_path:
        return load_fusion_model(cfg.fusion_model_path)
    return default_fusion_model()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_score(args) -> int:
    cfg = _config_from(args)
    ref = load_image(args.ref)
    test = load_image(args.test)
    ids = [m.strip() for m in args.metrics.split(",") if m.strip()]
    backbone = None
    if any(REGISTRY.get(m, {}).get("needs_backbone") for m in ids):
        backbone = _backbone_from(cfg)
    for mid in ids:
        score = compute_metric(mid, ref, test, backbone)
        print(f"{mid}\t{score.value:.6f}")
    return 0


def cmd_synth(args) -> int:
    path = synth_mod.generate_pairs(args.out, args.count, args.seed, args.size)
    print(path)
    return 0


def cmd_synth_labelled(args) -> int:
    path = synth_mod.generate_labelled(args.out, args.contents, args.seed, args.size)
    print(path)
    return 0


def cmd_fit_fusion(args) -> int:
    cfg = _config_from(args)
    backbone = _backbone_from(cfg)
    base = os.path.dirname(os.path.abspath(args.manifest))
    triples, targets = [], []
    for e in read_manifest(args.manifest):
        if not e.reference or e.mos is None:
            raise ManifestError(f"{args.manifest}: fit rows need image, reference and mos")
        test = load_image(os.path.join(base, e.image) if not os.path.isabs(e.image) else e.image)
        ref = load_image(
            os.path.join(base, e.reference) if not os.path.isabs(e.reference) else e.reference
        )
        triples.append(metric_triple(ref, test, backbone))
        targets.append(e.mos)
    model = fit_fusion(
        LabeledScoreSet(triples, np.array(targets), provenance=args.manifest),
        ridge=args.ridge if args.ridge is not None else cfg.fusion_ridge,
    )
    save_fusion_model(model, args.out)
    print(f"coefficients\t{model.coeffs[0]:.6f}\t{model.coeffs[1]:.6f}"
          f"\t{model.coeffs[2]:.6f}\t{model.coeffs[3]:.6f}")
    print(f"anchors\t{model.norm_lo:.6f}\t{model.norm_hi:.6f}")
    return 0


def cmd_train_iqa(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    save_resolved(cfg, os.path.join(args.out, "resolved.ini"))
    entries = read_manifest(args.manifest)
    train_e, test_e = split_by_content(entries, args.holdout, cfg.seed)
    base = os.path.dirname(os.path.abspath(args.manifest))

    def load_set(es):
        imgs, labels = [], []
        for e in es:
            p = e.image if os.path.isabs(e.image) else os.path.join(base, e.image)
            imgs.append(load_image(p))
            labels.append(e.mos)
        return imgs, np.array(labels, dtype=np.float64)

    train_imgs, train_labels = load_set(train_e)
    test_imgs, test_labels = load_set(test_e)
    model = QualityModel(
        _backbone_from(cfg), seed=cfg.iqa_head_seed, bilinear_normalize=cfg.iqa_bilinear_normalize
    )
    curve = train_iqa(
        model, train_imgs, train_labels, cfg.iqa_train_config(), seed=cfg.seed, epochs=args.epochs
    )
    prefix = os.path.join(args.out, "quality")
    model.save(prefix)
    with open(os.path.join(args.out, "curve.tsv"), "w", encoding="utf-8") as f:
        f.write("epoch\tloss\n")
        for i, v in enumerate(curve, start=1):
            f.write(f"{i}\t{v:.8f}\n")
    preds = np.array([model.predict(im).q_o for im in test_imgs])
    print(f"train_rows\t{len(train_imgs)}")
    print(f"holdout_rows\t{len(test_imgs)}")
    print(f"final_loss\t{curve[-1]:.6f}")
    print(f"holdout_plcc\t{plcc(preds, test_labels):.6f}")
    print(f"holdout_srcc\t{srcc(preds, test_labels):.6f}")
    return 0


def cmd_train_enhancer(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    save_resolved(cfg, os.path.join(args.out, "resolved.ini"))
    pairs = load_pairs(args.pairs)
    model = EnhancerModel(
        width=cfg.enh_width, blocks=cfg.enh_blocks, saturate=cfg.enh_saturate,
        sat_gain=cfg.enh_sat_gain, seed=cfg.enh_seed,
    )
    curve = pretrain(model, pairs, cfg.enhance_train_config(), seed=cfg.seed, epochs=args.epochs)
    model.save(os.path.join(args.out, "enhancer"))
    with open(os.path.join(args.out, "curve.tsv"), "w", encoding="utf-8") as f:
        f.write("epoch\tloss\n")
        for i, row in enumerate(curve, start=1):
            f.write(f"{i}\t{row['loss']:.8f}\n")
    print(f"pairs\t{len(pairs)}")
    print(f"final_loss\t{curve[-1]['loss']:.6f}")
    return 0


def cmd_run_loop(args) -> int:
    cfg = _config_from(args)
    state = loop_mod.run_loop(
        cfg, args.pairs, args.labeled, args.out,
        loops=args.loops, resume=not args.no_resume,
    )
    if args.plot:
        from .plotting import render_curves

        render_curves(
            {"mean_pseudo_mos": [r.mean_pseudo_mos for r in state.rows]},
            os.path.join(args.out, "pseudo_mos_curve.png"),
        )
    for row in state.rows:
        print(row.format())
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    did_something = False
    if args.iqa_model and args.manifest:
        model = QualityModel.load(args.iqa_model)
        images, labels, _ = load_labeled(args.manifest)
        preds = np.array([model.predict(im).q_o for im in images])
        print(f"plcc\t{plcc(preds, labels):.6f}")
        print(f"srcc\t{srcc(preds, labels):.6f}")
        did_something = True
    if args.pairs:
        backbone = _backbone_from(cfg)
        fusion = _fusion_from(cfg, args.fusion)
        pairs = load_pairs(args.pairs)
        labels = loop_mod.assign_pseudo_labels([(img, ref) for img, ref in pairs], fusion, backbone)
        print(f"mean_pseudo_mos\t{labels.mean():.6f}")
        did_something = True
    if not did_something:
        raise ConfigError("eval needs --iqa-model with --manifest, and/or --pairs")
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from(args)
    backbone = _backbone_from(cfg)
    base = os.path.dirname(os.path.abspath(args.manifest))
    rows = []
    for e in read_manifest(args.manifest):
        if not e.reference or e.mos is None:
            raise ManifestError(f"{args.manifest}: bench rows need image, reference and mos")
        test = load_image(os.path.join(base, e.image) if not os.path.isabs(e.image) else e.image)
        ref = load_image(
            os.path.join(base, e.reference) if not os.path.isabs(e.reference) else e.reference
        )
        rows.append((ref, test, e.mos))
    report = bench_mod.run_bench(
        rows, fit_fraction=args.fit_fraction, seed=cfg.seed, backbone=backbone,
        ridge=cfg.fusion_ridge, dataset_id=os.path.basename(args.manifest),
    )
    text = report.to_tsv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lumina", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int, default=seed_default)

    sp = sub.add_parser("score", help="full-reference metric scores for an image pair")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--metrics", default="fsim,iwssim_v,deepsim")
    common(sp)
    sp.set_defaults(fn=cmd_score)

    sp = sub.add_parser("synth", help="generate a synthetic paired low/normal-light set")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("synth-labelled", help="generate a graded-distortion quality set")
    sp.add_argument("--contents", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth_labelled)

    sp = sub.add_parser("fit-fusion", help="fit the metric fusion on labeled pairs")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ridge", type=float, default=None)
    common(sp)
    sp.set_defaults(fn=cmd_fit_fusion)

    sp = sub.add_parser("train-iqa", help="train the no-reference quality model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--holdout", type=float, default=0.2)
    common(sp)
    sp.set_defaults(fn=cmd_train_iqa)

    sp = sub.add_parser("train-enhancer", help="SSIM-pretrain the enhancement model")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    common(sp)
    sp.set_defaults(fn=cmd_train_enhancer)

    sp = sub.add_parser("run-loop", help="run the closed assessment/enhancement loop")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--labeled", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--loops", type=int, default=None)
    sp.add_argument("--no-resume", action="store_true")
    sp.add_argument("--plot", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_run_loop)

    sp = sub.add_parser("eval", help="evaluate a quality model and/or an enhanced set")
    sp.add_argument("--iqa-model", help="model prefix from train-iqa / run-loop checkpoints")
    sp.add_argument("--manifest", help="labeled manifest for PLCC/SRCC")
    sp.add_argument("--pairs", help="paired manifest for mean pseudo-MOS")
    sp.add_argument("--fusion", help="fusion model file (default: shipped)")
    common(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench", help="PLCC/SRCC table over the metric registry")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--fit-fraction", type=float, default=0.6)
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ImageIOError, ManifestError, WeightsFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LuminaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
