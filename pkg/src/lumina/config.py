"""Structured run configuration: INI-style ``key = value`` sections
binding every module's defaults. Unknown sections or keys are errors,
and each run embeds its fully resolved configuration in the output
directory so artifacts are reproducible from the config alone.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .errors import ConfigError
from .losses import FidelityConfig, JointLossConfig
from .quality import PROFILES, IqaTrainConfig


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class RunConfig:
    # [run]
    seed: int = 0
    # [fidelity]
    fid_window_size: int = 11
    fid_window_sigma: float = 1.5
    fid_stabilizer: float = 9e-4
    fid_hue_weight: float = 1.0
    fid_gate_exponent: float = 1.0
    # [joint]
    joint_quality_weight: float = 1.0
    joint_q_max: float = 1.0
    # [fusion]
    fusion_model_path: str = ""
    fusion_ridge: float = 0.0
    # [backbone]
    backbone_profile: str = "desk"
    backbone_seed: int = 7
    backbone_weights: str = ""
    # [iqa]
    iqa_head_seed: int = 11
    iqa_bilinear_normalize: bool = True
    iqa_batch_size: int = 32
    iqa_learning_rate: float = 1e-4
    iqa_epochs: int = 100
    iqa_finetune_epochs: int = 50
    iqa_crop: int = 256
    # [enhancer]
    enh_width: int = 32
    enh_blocks: int = 4
    enh_saturate: str = "logistic"
    enh_sat_gain: float = 4.0
    enh_seed: int = 5
    enh_batch_size: int = 32
    enh_learning_rate: float = 1e-4
    enh_pretrain_epochs: int = 200
    enh_finetune_epochs: int = 15
    enh_lr_drop: float = 0.5
    enh_crop: int = 256
    # [loop]
    loop_max_loops: int = 10
    loop_final_loop: int = 3

    def fidelity_config(self) -> FidelityConfig:
        return FidelityConfig(
            window_size=self.fid_window_size,
            window_sigma=self.fid_window_sigma,
            stabilizer=self.fid_stabilizer,
            hue_weight=self.fid_hue_weight,
            gate_exponent=self.fid_gate_exponent,
        )

    def joint_config(self) -> JointLossConfig:
        return JointLossConfig(self.joint_quality_weight, self.joint_q_max)

    def iqa_train_config(self) -> IqaTrainConfig:
        return IqaTrainConfig(
            batch_size=self.iqa_batch_size,
            learning_rate=self.iqa_learning_rate,
            epochs=self.iqa_epochs,
            finetune_epochs=self.iqa_finetune_epochs,
            crop=self.iqa_crop,
        )

    def enhance_train_config(self):
        from .enhance import EnhanceTrainConfig

        return EnhanceTrainConfig(
            learning_rate=self.enh_learning_rate,
            lr_drop=self.enh_lr_drop,
            batch_size=self.enh_batch_size,
            pretrain_epochs=self.enh_pretrain_epochs,
            finetune_epochs=self.enh_finetune_epochs,
            crop=self.enh_crop,
        )

    def validate(self) -> "RunConfig":
        if self.backbone_profile not in PROFILES:
            raise ConfigError(f"unknown backbone profile {self.backbone_profile!r}")
        if self.enh_saturate not in ("logistic", "identity"):
            raise ConfigError(f"unknown saturate mode {self.enh_saturate!r}")
        if self.loop_max_loops < 0 or self.loop_final_loop < 0:
            raise ConfigError("loop counts must be non-negative")
        return self


# section -> key -> (attribute, parser)
_SCHEMA = {
    "run": {"seed": ("seed", int)},
    "fidelity": {
        "window_size": ("fid_window_size", int),
        "window_sigma": ("fid_window_sigma", float),
        "stabilizer": ("fid_stabilizer", float),
        "hue_weight": ("fid_hue_weight", float),
        "gate_exponent": ("fid_gate_exponent", float),
    },
    "joint": {
        "quality_weight": ("joint_quality_weight", float),
        "q_max": ("joint_q_max", float),
    },
    "fusion": {
        "model_path": ("fusion_model_path", str),
        "ridge": ("fusion_ridge", float),
    },
    "backbone": {
        "profile": ("backbone_profile", str),
        "seed": ("backbone_seed", int),
        "weights": ("backbone_weights", str),
    },
    "iqa": {
        "head_seed": ("iqa_head_seed", int),
        "bilinear_normalize": ("iqa_bilinear_normalize", _bool),
        "batch_size": ("iqa_batch_size", int),
        "learning_rate": ("iqa_learning_rate", float),
        "epochs": ("iqa_epochs", int),
        "finetune_epochs": ("iqa_finetune_epochs", int),
        "crop": ("iqa_crop", int),
    },
    "enhancer": {
        "width": ("enh_width", int),
        "blocks": ("enh_blocks", int),
        "saturate": ("enh_saturate", str),
        "sat_gain": ("enh_sat_gain", float),
        "seed": ("enh_seed", int),
        "batch_size": ("enh_batch_size", int),
        "learning_rate": ("enh_learning_rate", float),
        "pretrain_epochs": ("enh_pretrain_epochs", int),
        "finetune_epochs": ("enh_finetune_epochs", int),
        "lr_drop": ("enh_lr_drop", float),
        "crop": ("enh_crop", int),
    },
    "loop": {
        "max_loops": ("loop_max_loops", int),
        "final_loop": ("loop_final_loop", int),
    },
}


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, optionally overridden by an INI file and then by an
    explicit {(section, key): value-string} mapping."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"bad config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                attr, parse = _SCHEMA[section][key]
                try:
                    setattr(cfg, attr, parse(raw))
                except ValueError as exc:
                    raise ConfigError(f"{path}: bad value for [{section}] {key}: {exc}") from exc
    for (section, key), raw in (overrides or {}).items():
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown override [{section}] {key}")
        attr, parse = _SCHEMA[section][key]
        setattr(cfg, attr, parse(str(raw)))
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    """Serialize to the same INI dialect ``load_config`` accepts."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (attr, parse) in keys.items():
            value = getattr(cfg, attr)
            if parse is _bool:
                value = "true" if value else "false"
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def save_resolved(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(cfg))
