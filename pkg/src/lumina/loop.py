"""Closed-loop training orchestration.

Executes the alternating optimization end to end: SSIM pretraining of
the enhancer, pseudo-labeling of its outputs through the metric fusion,
quality-model training on the labeled union, then per-loop enhancer
fine-tuning against the joint loss and quality-model refreshing, with
the enhanced pool cleared after every quality update.

Each completed phase checkpoints both models and appends one row to
``loop_report.tsv``. Training always continues from the quantized
checkpoint just written, which makes an aborted run resumable with
bit-identical subsequent reports.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, dump_config, save_resolved
from .enhance import EnhancerModel, finetune_joint, pretrain
from .errors import LuminaError, PreconditionError
from .fusion import FusionModel, apply_fusion, default_fusion_model, load_fusion_model
from .manifest import load_labeled, load_pairs
from .metrics import metric_triple
from .nnet import load_weights_into
from .quality import Backbone, QualityModel, train_iqa
from .util import atomic_write_bytes, parallel_map

INIT_STAGES = ("pretrain_enhancer", "collect_enhanced", "assign_labels", "train_quality", "clear_pool")
LOOP_STAGES = ("finetune_enhancer", "collect_enhanced", "assign_labels", "finetune_quality", "clear_pool")

REPORT_HEADER = "loop\tmean_pseudo_mos\tfidelity_loss\tquality_loss\tiqa_loss\tseed"


def expected_trace(loops: int) -> list[str]:
    trace = list(INIT_STAGES)
    for t in range(1, loops + 1):
        trace.extend(f"loop{t}:{s}" for s in LOOP_STAGES)
    return trace


class LoopStageError(LuminaError):
    """A stage failed; carries the loop index and stage name."""


@dataclass
class ReportRow:
    loop: int
    mean_pseudo_mos: float
    fidelity_loss: float
    quality_loss: float
    iqa_loss: float
    seed: int

    def format(self) -> str:
        def num(x):
            return "nan" if math.isnan(x) else f"{x:.8f}"

        return (
            f"{self.loop}\t{num(self.mean_pseudo_mos)}\t{num(self.fidelity_loss)}"
            f"\t{num(self.quality_loss)}\t{num(self.iqa_loss)}\t{self.seed}"
        )

    @classmethod
    def parse(cls, line: str) -> "ReportRow":
        cols = line.split("\t")
        return cls(int(cols[0]), float(cols[1]), float(cols[2]), float(cols[3]), float(cols[4]), int(cols[5]))


@dataclass
class LoopState:
    out_dir: str
    seed: int
    completed: int = -1  # highest fully checkpointed loop (0 = init phase)
    rows: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    trace_flushed: int = 0
    curves: dict = field(default_factory=dict)  # loop -> phase loss curves (this process only)

    def checkpoint_prefixes(self, loop: int) -> tuple[str, str]:
        d = os.path.join(self.out_dir, "checkpoints")
        return (
            os.path.join(d, f"enhancer_loop{loop}"),
            os.path.join(d, f"quality_loop{loop}"),
        )

    def report_text(self) -> str:
        lines = [REPORT_HEADER] + [r.format() for r in self.rows]
        return "\n".join(lines) + "\n"


def select_final(state: LoopState, k: int | None = None) -> tuple[str, str]:
    """Checkpoint pair of loop ``k`` (defaults to 3); range-checked."""
    k = 3 if k is None else k
    if k < 0 or k > state.completed:
        raise PreconditionError(f"loop {k} not completed (have 0..{state.completed})")
    return state.checkpoint_prefixes(k)


# ---------------------------------------------------------------------------
# pseudo-labeling
# ---------------------------------------------------------------------------

def assign_pseudo_labels(enhanced_pairs, fusion: FusionModel, backbone) -> np.ndarray:
    """Pseudo-MOS for each (enhanced, reference) pair: compute the metric
    triple and push it through the fusion mapping."""
    def label(pair):
        enh, ref = pair
        return apply_fusion(fusion, metric_triple(ref, enh, backbone))

    return np.array(parallel_map(label, list(enhanced_pairs)))


def mean_pseudo_mos(enhanced_pairs, fusion: FusionModel, backbone) -> float:
    labels = assign_pseudo_labels(enhanced_pairs, fusion, backbone)
    return float(labels.mean())


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _build_models(cfg: RunConfig) -> tuple[EnhancerModel, QualityModel]:
    enhancer = EnhancerModel(
        width=cfg.enh_width,
        blocks=cfg.enh_blocks,
        saturate=cfg.enh_saturate,
        sat_gain=cfg.enh_sat_gain,
        seed=cfg.enh_seed,
    )
    if cfg.backbone_weights:
        backbone = Backbone.from_file(cfg.backbone_weights, cfg.backbone_profile)
    else:
        backbone = Backbone.seeded(cfg.backbone_profile, cfg.backbone_seed)
    q_model = QualityModel(
        backbone, seed=cfg.iqa_head_seed, bilinear_normalize=cfg.iqa_bilinear_normalize
    )
    return enhancer, q_model


def _resolve_fusion(cfg: RunConfig) -> FusionModel:
    if cfg.fusion_model_path:
        return load_fusion_model(cfg.fusion_model_path)
    return default_fusion_model()


def _checkpoint(state: LoopState, loop: int, enhancer: EnhancerModel, q_model: QualityModel) -> None:
    """Persist both models, then reload them so training continues from
    exactly what resume would see (file precision)."""
    enh_prefix, qual_prefix = state.checkpoint_prefixes(loop)
    os.makedirs(os.path.dirname(enh_prefix), exist_ok=True)
    enhancer.save(enh_prefix)
    q_model.save(qual_prefix)
    load_weights_into(enh_prefix + ".llw", enhancer.params())
    load_weights_into(qual_prefix + ".head.llw", q_model.head_params())
    load_weights_into(qual_prefix + ".backbone.llw", q_model.backbone.params())


def _commit(state: LoopState, loop: int) -> None:
    atomic_write_bytes(os.path.join(state.out_dir, "loop_report.tsv"), state.report_text().encode())
    atomic_write_bytes(os.path.join(state.out_dir, "state.txt"), f"completed = {loop}\n".encode())
    with open(os.path.join(state.out_dir, "trace.log"), "a", encoding="utf-8") as f:
        for line in state.trace[state.trace_flushed :]:
            f.write(line + "\n")
    state.trace_flushed = len(state.trace)
    state.completed = loop


def _stage(state: LoopState, loop: int, name: str, fn):
    token = name if loop == 0 else f"loop{loop}:{name}"
    try:
        result = fn()
    except Exception as exc:
        raise LoopStageError(f"loop {loop}, stage {name}: {exc}") from exc
    state.trace.append(token)
    return result


def run_loop(
    cfg: RunConfig,
    pairs_manifest: str,
    labeled_manifest: str,
    out_dir: str,
    loops: int | None = None,
    resume: bool = True,
) -> LoopState:
    """Run the full alternation for ``loops`` iterations (default from
    config). ``loops = 0`` runs only the pretrain + initial quality
    phases. With ``resume`` the run continues after the last committed
    loop of an aborted run in the same directory.
    """
    loops = cfg.loop_max_loops if loops is None else loops
    os.makedirs(out_dir, exist_ok=True)
    state = LoopState(out_dir=out_dir, seed=cfg.seed)

    pairs = load_pairs(pairs_manifest)
    qua_images, qua_labels, _ = load_labeled(labeled_manifest)
    if not pairs:
        raise PreconditionError("paired manifest is empty")

    enhancer, q_model = _build_models(cfg)
    fusion = _resolve_fusion(cfg)
    icfg = cfg.iqa_train_config()
    ecfg = cfg.enhance_train_config()
    fcfg = cfg.fidelity_config()
    jcfg = cfg.joint_config()
    lr_drop = cfg.enh_lr_drop  # single drop factor for both fine-tunes

    resolved_path = os.path.join(out_dir, "resolved.ini")
    resolved_now = dump_config(cfg)
    state_path = os.path.join(out_dir, "state.txt")
    start_loop = 0
    if resume and os.path.exists(state_path):
        with open(resolved_path, "r", encoding="utf-8") as f:
            if f.read() != resolved_now:
                raise PreconditionError(f"{out_dir}: existing run used a different config")
        with open(state_path, "r", encoding="utf-8") as f:
            completed = int(f.read().partition("=")[2])
        with open(os.path.join(out_dir, "loop_report.tsv"), "r", encoding="utf-8") as f:
            lines = f.read().splitlines()[1:]
        state.rows = [ReportRow.parse(x) for x in lines if x][: completed + 1]
        enh_prefix, qual_prefix = state.checkpoint_prefixes(completed)
        load_weights_into(enh_prefix + ".llw", enhancer.params())
        load_weights_into(qual_prefix + ".head.llw", q_model.head_params())
        load_weights_into(qual_prefix + ".backbone.llw", q_model.backbone.params())
        state.completed = completed
        start_loop = completed + 1
    else:
        save_resolved(cfg, resolved_path)

    d_end: list = []

    def collect() -> list:
        enhanced = [(enhancer.enhance(low), ref) for low, ref in pairs]
        return enhanced

    if start_loop == 0:
        pre_curve = _stage(
            state, 0, "pretrain_enhancer",
            lambda: pretrain(enhancer, pairs, ecfg, seed=cfg.seed),
        )
        d_end = _stage(state, 0, "collect_enhanced", collect)
        labels = _stage(
            state, 0, "assign_labels",
            lambda: assign_pseudo_labels(d_end, fusion, q_model.backbone),
        )
        iqa_curve = _stage(
            state, 0, "train_quality",
            lambda: train_iqa(
                q_model,
                qua_images + [e for e, _ in d_end],
                np.concatenate([qua_labels, labels]),
                icfg,
                seed=cfg.seed,
                epochs=icfg.epochs,
            ),
        )
        d_end = _stage(state, 0, "clear_pool", lambda: [])
        assert len(d_end) == 0, "enhanced pool must be empty after quality training"
        state.curves[0] = {"pretrain": [r["loss"] for r in pre_curve], "iqa": list(iqa_curve)}
        state.rows.append(
            ReportRow(0, float(labels.mean()), pre_curve[-1]["loss"], float("nan"), iqa_curve[-1], cfg.seed)
        )
        _checkpoint(state, 0, enhancer, q_model)
        _commit(state, 0)

    for t in range(max(start_loop, 1), loops + 1):
        ft_curve = _stage(
            state, t, "finetune_enhancer",
            lambda t=t: finetune_joint(
                enhancer, pairs, q_model, fcfg, jcfg, ecfg, seed=cfg.seed + t,
            ),
        )
        d_end = _stage(state, t, "collect_enhanced", collect)
        labels = _stage(
            state, t, "assign_labels",
            lambda: assign_pseudo_labels(d_end, fusion, q_model.backbone),
        )
        iqa_curve = _stage(
            state, t, "finetune_quality",
            lambda t=t: train_iqa(
                q_model,
                qua_images + [e for e, _ in d_end],
                np.concatenate([qua_labels, labels]),
                icfg,
                seed=cfg.seed + t,
                epochs=icfg.finetune_epochs,
                lr=icfg.learning_rate * lr_drop,
            ),
        )
        d_end = _stage(state, t, "clear_pool", lambda: [])
        assert len(d_end) == 0, "enhanced pool must be empty after each loop"
        state.curves[t] = {"enhancer": [r["loss"] for r in ft_curve], "iqa": list(iqa_curve)}
        last = ft_curve[-1]
        state.rows.append(
            ReportRow(
                t,
                float(labels.mean()),
                last.get("fidelity", last["loss"]),
                last.get("quality", float("nan")),
                iqa_curve[-1],
                cfg.seed,
            )
        )
        _checkpoint(state, t, enhancer, q_model)
        _commit(state, t)

    return state
