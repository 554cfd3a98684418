"""Manifest parsing/writing and the strict run configuration."""

import numpy as np
import pytest

from lumina.config import RunConfig, dump_config, load_config, save_resolved
from lumina.errors import ConfigError, ManifestError
from lumina.imaging import save_image
from lumina.manifest import (
    ManifestEntry,
    load_labeled,
    load_pairs,
    read_manifest,
    split_by_content,
    write_manifest,
)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        entries = [
            ManifestEntry("a__low.ppm", "a__ref.ppm"),
            ManifestEntry("b__g1.ppm", None, 0.75),
            ManifestEntry("c__e.ppm", "c__ref.ppm", 0.5),
        ]
        path = str(tmp_path / "m.tsv")
        write_manifest(path, entries)
        back = read_manifest(path)
        assert [(e.image, e.reference, e.mos) for e in back] == [
            ("a__low.ppm", "a__ref.ppm", None),
            ("b__g1.ppm", None, 0.75),
            ("c__e.ppm", "c__ref.ppm", 0.5),
        ]

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("# header\n\nimg.ppm\tref.ppm\n")
        assert len(read_manifest(str(path))) == 1

    def test_mos_range_enforced(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("img.ppm\t\t1.5\n")
        with pytest.raises(ManifestError):
            read_manifest(str(path))

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a\tb\tc\td\n")
        with pytest.raises(ManifestError):
            read_manifest(str(path))

    def test_content_id_is_stem_prefix(self):
        assert ManifestEntry("dir/c0001__g3.ppm").content_id() == "c0001"
        assert ManifestEntry("odd-name.ppm").content_id() == "odd-name"

    def test_split_by_content_is_disjoint(self):
        entries = [
            ManifestEntry(f"c{i:03d}__g{g}.ppm", None, 0.5) for i in range(10) for g in range(3)
        ]
        train, test = split_by_content(entries, 0.3, seed=1)
        train_ids = {e.content_id() for e in train}
        test_ids = {e.content_id() for e in test}
        assert train_ids.isdisjoint(test_ids)
        assert len(train) + len(test) == len(entries)
        assert len(test_ids) == 3

    def test_load_pairs_checks_sizes(self, tmp_path, rng):
        save_image(rng.random((8, 8, 3)), str(tmp_path / "a__low.ppm"))
        save_image(rng.random((9, 8, 3)), str(tmp_path / "a__ref.ppm"))
        path = str(tmp_path / "m.tsv")
        write_manifest(path, [ManifestEntry("a__low.ppm", "a__ref.ppm")])
        with pytest.raises(ManifestError):
            load_pairs(path)

    def test_load_labeled_requires_mos(self, tmp_path, rng):
        save_image(rng.random((8, 8, 3)), str(tmp_path / "x.ppm"))
        path = str(tmp_path / "m.tsv")
        write_manifest(path, [ManifestEntry("x.ppm")])
        with pytest.raises(ManifestError):
            load_labeled(path)


class TestConfig:
    def test_defaults_follow_published_settings(self):
        cfg = load_config(None)
        assert cfg.iqa_batch_size == 32
        assert cfg.iqa_learning_rate == 1e-4
        assert cfg.enh_pretrain_epochs == 200
        assert cfg.iqa_epochs == 100
        assert cfg.enh_finetune_epochs == 15
        assert cfg.iqa_finetune_epochs == 50
        assert cfg.enh_lr_drop == 0.5
        assert cfg.loop_max_loops == 10
        assert cfg.loop_final_loop == 3
        assert cfg.fid_stabilizer == pytest.approx(9e-4)
        assert cfg.joint_quality_weight == 1.0
        assert cfg.iqa_crop == 256

    def test_file_overrides(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[enhancer]\nwidth = 16\n[run]\nseed = 9\n")
        cfg = load_config(str(path))
        assert cfg.enh_width == 16 and cfg.seed == 9
        assert cfg.enh_blocks == 4  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[enhancer]\nwidht = 16\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[enhanzer]\nwidth = 16\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_dump_reload_identity(self, tmp_path):
        cfg = load_config(None, overrides={("enhancer", "width"): "24", ("iqa", "epochs"): "7"})
        path = str(tmp_path / "resolved.ini")
        save_resolved(cfg, path)
        again = load_config(path)
        assert dump_config(again) == dump_config(cfg)

    def test_bad_profile_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, overrides={("backbone", "profile"): "vgg19"})

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[iqa]\nepochs = many\n")
        with pytest.raises(ConfigError):
            load_config(str(path))
