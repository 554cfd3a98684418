"""No-reference quality model: a frozen convolutional feature extractor
tapped at two stages, mean/std statistics pooling, bilinear
style-modulation heads, and three regression outputs (one per tap plus
a fused overall score).

Only the head parameters are trainable; the backbone is initialized
once (seeded He-uniform, or loaded from a weights file) and never
updated. Externally converted pretrained weights can be supplied
through the same file format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import PreconditionError, ShapeMismatchError
from .nnet import (
    Adam,
    channel_std,
    BilinearFuse,
    Conv3x3,
    FullyConnected,
    GlobalMeanPool,
    GlobalStdPool,
    ReLU,
    Sequential,
    image_to_tensor,
    load_weights_into,
    save_weights,
)
from .util import derive_rng, params_checksum


@dataclass(frozen=True)
class BackboneProfile:
    name: str
    widths: tuple
    taps: tuple  # 1-based stage indices, post-activation / pre-pool
    min_side: int


PROFILES = {
    "desk": BackboneProfile("desk", (16, 32, 64, 128, 128), (3, 5), 32),
    "tiny": BackboneProfile("tiny", (4, 8), (1, 2), 8),
}


class Backbone:
    """Slim VGG-shaped stack: one 3x3 conv + ReLU per stage, 2x2 max
    pooling between stages. Parameters are frozen after construction."""

    def __init__(self, profile: BackboneProfile, seed: int | None = 7):
        self.profile = profile
        self.convs = []
        c_in = 3
        for i, width in enumerate(profile.widths):
            rng = derive_rng("backbone", seed if seed is not None else 0, i)
            self.convs.append(Conv3x3(c_in, width, rng=rng if seed is not None else None))
            c_in = width

    @classmethod
    def seeded(cls, profile: str = "desk", seed: int = 7) -> "Backbone":
        return cls(PROFILES[profile], seed=seed)

    @classmethod
    def from_file(cls, path: str, profile: str = "desk") -> "Backbone":
        bb = cls(PROFILES[profile], seed=None)
        load_weights_into(path, bb.params())
        return bb

    def params(self) -> dict:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"stage{i}.w"] = conv.params["w"]
            out[f"stage{i}.b"] = conv.params["b"]
        return out

    def checksum(self) -> str:
        return params_checksum(self.params().values())

    def save(self, path: str) -> None:
        save_weights(path, self.params())

    def _check_input(self, t: np.ndarray) -> None:
        if t.ndim != 3 or t.shape[0] != 3:
            raise ShapeMismatchError(f"backbone expects (3, H, W), got {t.shape}")
        if min(t.shape[1], t.shape[2]) < self.profile.min_side:
            raise PreconditionError(
                f"backbone '{self.profile.name}' needs min side >= {self.profile.min_side}"
            )

    def forward_cached(self, t: np.ndarray):
        """Run all stages; returns (tap maps, cache for backward)."""
        self._check_input(t)
        cache = []
        taps = []
        x = t
        n = len(self.convs)
        for i, conv in enumerate(self.convs, start=1):
            z = conv.forward(x)
            a = np.maximum(z, 0.0)
            cache.append((x, z, a))
            if i in self.profile.taps:
                taps.append(a)
            if i < n:
                x = _kernels.maxpool2_fwd(a)
        return taps, cache

    def feature_maps(self, img: np.ndarray) -> list:
        """Tap activations for an (H, W, C) image; grayscale is replicated."""
        a = np.asarray(img, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.shape[2] == 1:
            a = np.repeat(a, 3, axis=2)
        taps, _ = self.forward_cached(image_to_tensor(a))
        return taps

    def backward_to_input(self, cache, tap_grads: list) -> np.ndarray:
        """Propagate gradients on the tap maps back to the input tensor.

        Parameter gradients are not produced: the backbone is frozen.
        """
        tap_iter = dict(zip(self.profile.taps, tap_grads))
        n = len(self.convs)
        g = np.zeros_like(cache[-1][2])
        for i in range(n, 0, -1):
            x, z, a = cache[i - 1]
            if i in tap_iter:
                g = g + tap_iter[i]
            g = g * (z > 0.0)
            g, _ = self.convs[i - 1].backward(x, g)
            if i > 1:
                g = _kernels.maxpool2_bwd(cache[i - 2][2], g)
        return g


@dataclass
class QualityScores:
    q_o: float
    q_l1: float
    q_l2: float

    def as_tuple(self):
        return (self.q_o, self.q_l1, self.q_l2)


@dataclass
class IqaTrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 100
    finetune_epochs: int = 50
    crop: int = 256

    def __post_init__(self):
        if min(self.batch_size, self.epochs, self.finetune_epochs, self.crop) <= 0:
            raise PreconditionError("train config values must be positive")
        if self.learning_rate <= 0:
            raise PreconditionError("learning rate must be positive")


_STATS_FC = (128, 64)
_REG_FC = (256, 64)
_BILINEAR_DIM = _STATS_FC[-1] ** 2


def _stats_chain(c_in: int, rng) -> Sequential:
    return Sequential(
        [
            FullyConnected(c_in, _STATS_FC[0], rng=rng),
            ReLU(),
            FullyConnected(_STATS_FC[0], _STATS_FC[1], rng=rng),
            ReLU(),
        ]
    )


def _reg_chain(n_in: int, rng) -> Sequential:
    return Sequential(
        [
            FullyConnected(n_in, _REG_FC[0], rng=rng),
            ReLU(),
            FullyConnected(_REG_FC[0], _REG_FC[1], rng=rng),
            ReLU(),
            FullyConnected(_REG_FC[1], 1, rng=rng),
        ]
    )


class QualityModel:
    """Statistics-regression scoring head over a frozen backbone."""

    def __init__(self, backbone: Backbone, seed: int = 11, bilinear_normalize: bool = True):
        self.backbone = backbone
        self.bilinear_normalize = bilinear_normalize
        self.seed = seed
        widths = [backbone.profile.widths[t - 1] for t in backbone.profile.taps]
        self.mean_pool = GlobalMeanPool()
        self.std_pool = GlobalStdPool()
        self.fuse = BilinearFuse(normalize=bilinear_normalize)
        self.mean_chains = []
        self.std_chains = []
        self.reg_chains = []
        for i, c in enumerate(widths):
            self.mean_chains.append(_stats_chain(c, derive_rng("iqa-head", seed, i, 0)))
            self.std_chains.append(_stats_chain(c, derive_rng("iqa-head", seed, i, 1)))
            self.reg_chains.append(_reg_chain(_BILINEAR_DIM, derive_rng("iqa-head", seed, i, 2)))
        self.fused_chain = _reg_chain(len(widths) * _BILINEAR_DIM, derive_rng("iqa-head", seed, 99))

    # -- parameters ---------------------------------------------------------

    def head_params(self) -> dict:
        out = {}
        for i in range(len(self.reg_chains)):
            out.update(self.mean_chains[i].named_params(f"tap{i + 1}.mean."))
            out.update(self.std_chains[i].named_params(f"tap{i + 1}.std."))
            out.update(self.reg_chains[i].named_params(f"tap{i + 1}.reg."))
        out.update(self.fused_chain.named_params("fused."))
        return out

    def save(self, prefix: str) -> None:
        self.backbone.save(prefix + ".backbone.llw")
        save_weights(prefix + ".head.llw", self.head_params())
        meta = (
            f"profile = {self.backbone.profile.name}\n"
            f"bilinear_normalize = {int(self.bilinear_normalize)}\n"
            f"head_seed = {self.seed}\n"
        )
        with open(prefix + ".meta", "w", encoding="utf-8") as f:
            f.write(meta)

    @classmethod
    def load(cls, prefix: str) -> "QualityModel":
        meta = {}
        with open(prefix + ".meta", "r", encoding="utf-8") as f:
            for line in f:
                key, _, value = line.partition("=")
                if value:
                    meta[key.strip()] = value.strip()
        backbone = Backbone.from_file(prefix + ".backbone.llw", meta.get("profile", "desk"))
        model = cls(
            backbone,
            seed=int(meta.get("head_seed", "11")),
            bilinear_normalize=bool(int(meta.get("bilinear_normalize", "1"))),
        )
        load_weights_into(prefix + ".head.llw", model.head_params())
        return model

    # -- forward ------------------------------------------------------------

    def extract_stats(self, img: np.ndarray) -> list:
        """Per-tap (mean vector, std vector) through the frozen backbone."""
        taps = self.backbone.feature_maps(img)
        return [(t.mean(axis=(1, 2)), channel_std(t)) for t in taps]

    def _head_forward(self, stats: list):
        cache = {"stats": stats, "mean": [], "std": [], "fused_vecs": [], "reg": []}
        scores_l = []
        for i, (mu, sd) in enumerate(stats):
            m64, m_xs = self.mean_chains[i].forward_cached(mu)
            s64, s_xs = self.std_chains[i].forward_cached(sd)
            fused = self.fuse.forward((m64, s64))
            q, r_xs = self.reg_chains[i].forward_cached(fused)
            cache["mean"].append((m_xs, m64))
            cache["std"].append((s_xs, s64))
            cache["fused_vecs"].append(fused)
            cache["reg"].append(r_xs)
            scores_l.append(float(q[0]))
        concat = np.concatenate(cache["fused_vecs"])
        q_o_vec, f_xs = self.fused_chain.forward_cached(concat)
        cache["concat"] = concat
        cache["fused_reg"] = f_xs
        scores = QualityScores(float(q_o_vec[0]), scores_l[0], scores_l[1])
        return scores, cache

    def _head_backward(self, cache, g_o: float, g_l: list):
        """Gradients of a scalar loss wrt head params and the stats vectors."""
        grads = {}
        n_taps = len(cache["stats"])
        g_concat, fused_grads = self.fused_chain.backward_from(
            cache["fused_reg"], np.array([g_o])
        )
        for k, v in _merge(fused_grads).items():
            grads[f"fused.{k}"] = v
        stats_grads = []
        d = _BILINEAR_DIM
        for i in range(n_taps):
            g_fused = g_concat[i * d : (i + 1) * d].copy()
            g_q, reg_grads = self.reg_chains[i].backward_from(
                cache["reg"][i], np.array([g_l[i]])
            )
            g_fused += g_q
            for k, v in _merge(reg_grads).items():
                grads[f"tap{i + 1}.reg.{k}"] = v
            m_xs, m64 = cache["mean"][i]
            s_xs, s64 = cache["std"][i]
            (g_m64, g_s64), _ = self.fuse.backward((m64, s64), g_fused)
            g_mu, mean_grads = self.mean_chains[i].backward_from(m_xs, g_m64)
            g_sd, std_grads = self.std_chains[i].backward_from(s_xs, g_s64)
            for k, v in _merge(mean_grads).items():
                grads[f"tap{i + 1}.mean.{k}"] = v
            for k, v in _merge(std_grads).items():
                grads[f"tap{i + 1}.std.{k}"] = v
            stats_grads.append((g_mu, g_sd))
        return grads, stats_grads

    def predict(self, img: np.ndarray) -> QualityScores:
        scores, _ = self._head_forward(self.extract_stats(img))
        return scores

    def predict_with_input_grad(self, img: np.ndarray):
        """Scores plus d(q_o)/d(pixels), backpropagated through the frozen
        backbone (its parameters receive no gradient)."""
        a = np.asarray(img, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ShapeMismatchError("quality scoring needs an (H, W, 3) image")
        t = image_to_tensor(a)
        taps, bb_cache = self.backbone.forward_cached(t)
        stats = [(m.mean(axis=(1, 2)), channel_std(m)) for m in taps]
        scores, cache = self._head_forward(stats)
        _, stats_grads = self._head_backward(cache, 1.0, [0.0] * len(taps))
        tap_grads = []
        for tap_map, (g_mu, g_sd) in zip(taps, stats_grads):
            g = self.mean_pool.backward(tap_map, g_mu)[0]
            g += self.std_pool.backward(tap_map, g_sd)[0]
            tap_grads.append(g)
        g_input = self.backbone.backward_to_input(bb_cache, tap_grads)
        return scores, np.ascontiguousarray(g_input.transpose(1, 2, 0))


def _merge(per_layer: list) -> dict:
    out = {}
    for i, gdict in enumerate(per_layer):
        for k, v in gdict.items():
            out[f"{i}.{k}"] = v
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _random_crop(rng: np.random.Generator, img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    s = min(size, h, w)
    i = int(rng.integers(0, h - s + 1))
    j = int(rng.integers(0, w - s + 1))
    return img[i : i + s, j : j + s]


def train_iqa(
    model: QualityModel,
    images: list,
    labels,
    cfg: IqaTrainConfig | None = None,
    seed: int = 0,
    epochs: int | None = None,
    lr: float | None = None,
) -> list:
    """L1 regression of all three outputs to the labels; Adam on the head
    parameters only. Returns the per-epoch mean loss curve."""
    cfg = cfg or IqaTrainConfig()
    labels = np.asarray(labels, dtype=np.float64)
    if len(images) == 0:
        raise PreconditionError("empty training set")
    if labels.min() < 0.0 or labels.max() > 1.0:
        raise PreconditionError("labels must lie in [0, 1]")
    epochs = cfg.epochs if epochs is None else epochs
    params = model.head_params()
    opt = Adam(lr=cfg.learning_rate if lr is None else lr)
    rng = derive_rng("train-iqa", seed)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(images))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for idx in batch:
                crop = _random_crop(rng, images[idx], cfg.crop)
                stats = model.extract_stats(crop)
                scores, cache = model._head_forward(stats)
                y = labels[idx]
                epoch_loss += (
                    abs(scores.q_o - y) + abs(scores.q_l1 - y) + abs(scores.q_l2 - y)
                )
                g_o = float(np.sign(scores.q_o - y))
                g_l = [float(np.sign(scores.q_l1 - y)), float(np.sign(scores.q_l2 - y))]
                grads, _ = model._head_backward(cache, g_o, g_l)
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            opt.step(params, acc)
        curve.append(epoch_loss / len(images))
    return curve
