"""Loop orchestration: stage order, pool clearing, pseudo-labeling,
checkpoint selection, determinism, and resume equivalence.

Runs use a deliberately tiny configuration; the desk-scale seeded run
lives in the acceptance suite.
"""

import os

import numpy as np
import pytest

from lumina.config import load_config
from lumina.errors import PreconditionError
from lumina.fusion import apply_fusion, default_fusion_model
from lumina.loop import (
    LoopState,
    assign_pseudo_labels,
    expected_trace,
    mean_pseudo_mos,
    run_loop,
    select_final,
)
from lumina.metrics import MetricTriple, metric_triple
from lumina.quality import Backbone
from lumina.synth import generate_labelled, generate_pairs

TINY_OVERRIDES = {
    ("run", "seed"): "1",
    ("backbone", "profile"): "tiny",
    ("iqa", "epochs"): "2",
    ("iqa", "finetune_epochs"): "1",
    ("iqa", "crop"): "32",
    ("iqa", "batch_size"): "8",
    ("iqa", "learning_rate"): "1e-3",
    ("enhancer", "width"): "8",
    ("enhancer", "blocks"): "1",
    ("enhancer", "pretrain_epochs"): "2",
    ("enhancer", "finetune_epochs"): "1",
    ("enhancer", "crop"): "32",
    ("enhancer", "batch_size"): "8",
    ("loop", "max_loops"): "2",
}


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("loopdata")
    pairs = generate_pairs(str(d / "pairs"), count=4, seed=3, size=32)
    labeled = generate_labelled(str(d / "lab"), contents=2, seed=5, size=32)
    return pairs, labeled


@pytest.fixture(scope="module")
def tiny_run(tiny_data, tmp_path_factory):
    pairs, labeled = tiny_data
    out = str(tmp_path_factory.mktemp("run"))
    cfg = load_config(None, overrides=TINY_OVERRIDES)
    state = run_loop(cfg, pairs, labeled, out, loops=2)
    return cfg, state


class TestPseudoLabels:
    def test_identity_pairs_give_one_constant(self, rng):
        backbone = Backbone.seeded("tiny", 7)
        fusion = default_fusion_model()
        imgs = [rng.random((32, 32, 3)) for _ in range(3)]
        labels = assign_pseudo_labels([(im, im) for im in imgs], fusion, backbone)
        expected = apply_fusion(fusion, MetricTriple(1.0, 1.0, 1.0))
        assert np.allclose(labels, expected, atol=1e-9)
        assert len(set(np.round(labels, 12))) == 1

    def test_empty_input_gives_empty_labels(self):
        backbone = Backbone.seeded("tiny", 7)
        labels = assign_pseudo_labels([], default_fusion_model(), backbone)
        assert labels.size == 0

    def test_labels_match_component_composition(self, rng):
        """Same numbers as computing the metric triple and the fusion
        mapping in two separate steps."""
        backbone = Backbone.seeded("tiny", 7)
        fusion = default_fusion_model()
        enh = rng.random((32, 32, 3))
        ref = np.clip(enh + rng.normal(0, 0.05, enh.shape), 0, 1)
        label = assign_pseudo_labels([(enh, ref)], fusion, backbone)[0]
        triple = metric_triple(ref, enh, backbone)
        assert label == pytest.approx(apply_fusion(fusion, triple), abs=1e-12)

    def test_mean_pseudo_mos(self, rng):
        backbone = Backbone.seeded("tiny", 7)
        fusion = default_fusion_model()
        imgs = [rng.random((32, 32, 3)) for _ in range(2)]
        m = mean_pseudo_mos([(im, im) for im in imgs], fusion, backbone)
        assert m == pytest.approx(apply_fusion(fusion, MetricTriple(1, 1, 1)), abs=1e-9)


class TestRun:
    def test_trace_matches_expected_sequence(self, tiny_run):
        _, state = tiny_run
        assert state.trace == expected_trace(2)

    def test_report_has_loop_rows(self, tiny_run):
        _, state = tiny_run
        assert [r.loop for r in state.rows] == [0, 1, 2]
        for row in state.rows:
            assert 0.0 <= row.mean_pseudo_mos <= 1.0
            assert np.isfinite(row.iqa_loss)

    def test_checkpoints_exist_per_loop(self, tiny_run):
        _, state = tiny_run
        for t in range(3):
            enh, qual = state.checkpoint_prefixes(t)
            assert os.path.exists(enh + ".llw")
            assert os.path.exists(qual + ".head.llw")
            assert os.path.exists(qual + ".backbone.llw")

    def test_select_final(self, tiny_run):
        _, state = tiny_run
        enh, qual = select_final(state, 2)
        assert enh.endswith("enhancer_loop2")
        enh0, _ = select_final(state, 0)
        assert enh0.endswith("enhancer_loop0")
        with pytest.raises(PreconditionError):
            select_final(state, 5)
        with pytest.raises(PreconditionError):
            select_final(state)  # default k=3 beyond a 2-loop run

    def test_zero_loops_runs_only_init_phase(self, tiny_data, tmp_path):
        pairs, labeled = tiny_data
        cfg = load_config(None, overrides=TINY_OVERRIDES)
        state = run_loop(cfg, pairs, labeled, str(tmp_path / "z"), loops=0)
        assert state.trace == expected_trace(0)
        assert [r.loop for r in state.rows] == [0]
        assert os.path.exists(state.checkpoint_prefixes(0)[0] + ".llw")

    def test_determinism_and_resume(self, tiny_data, tiny_run, tmp_path):
        pairs, labeled = tiny_data
        cfg, state = tiny_run
        # identical seed reproduces the report byte-for-byte
        rerun = run_loop(cfg, pairs, labeled, str(tmp_path / "again"), loops=2)
        assert rerun.report_text() == state.report_text()
        # abort after loop 1, then resume to loop 2
        part = run_loop(cfg, pairs, labeled, str(tmp_path / "resumed"), loops=1)
        assert part.completed == 1
        full = run_loop(cfg, pairs, labeled, str(tmp_path / "resumed"), loops=2)
        assert full.report_text() == state.report_text()

    def test_resume_rejects_config_change(self, tiny_data, tmp_path):
        pairs, labeled = tiny_data
        cfg = load_config(None, overrides=TINY_OVERRIDES)
        out = str(tmp_path / "r")
        run_loop(cfg, pairs, labeled, out, loops=0)
        cfg2 = load_config(None, overrides={**TINY_OVERRIDES, ("enhancer", "width"): "16"})
        with pytest.raises(PreconditionError):
            run_loop(cfg2, pairs, labeled, out, loops=1)

    def test_stage_error_names_loop_and_stage(self, tmp_path):
        """16px pairs survive pretraining but are too small for the
        feature-similarity metric, so labeling aborts with context."""
        from lumina.loop import LoopStageError

        pairs = generate_pairs(str(tmp_path / "p"), count=2, seed=1, size=16)
        labeled = generate_labelled(str(tmp_path / "l"), contents=1, seed=1, size=32)
        cfg = load_config(
            None, overrides={**TINY_OVERRIDES, ("iqa", "crop"): "16", ("enhancer", "crop"): "16"}
        )
        with pytest.raises(LoopStageError, match=r"loop 0, stage assign_labels"):
            run_loop(cfg, pairs, labeled, str(tmp_path / "run"), loops=0)
