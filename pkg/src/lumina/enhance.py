"""Trainable low-light enhancement network.

A small residual convolutional model: head conv, a few conv-ReLU-conv
residual blocks, tail conv, a global additive skip from the input, and
a smooth saturating output map. SSIM-loss pretraining and joint
fidelity+quality fine-tuning live here; both are plain Adam loops with
seeded shuffling and cropping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ShapeMismatchError
from .losses import FidelityConfig, JointLossConfig, joint_loss, ssim_loss
from .nnet import Adam, Conv3x3, image_to_tensor, load_weights_into, save_weights, tensor_to_image
from .util import derive_rng, params_checksum


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class EnhanceTrainConfig:
    learning_rate: float = 1e-4
    lr_drop: float = 0.5  # one-time drop entering the fine-tune phase
    batch_size: int = 32
    pretrain_epochs: int = 200
    finetune_epochs: int = 15
    crop: int = 256

    def __post_init__(self):
        if min(self.batch_size, self.pretrain_epochs, self.finetune_epochs, self.crop) <= 0:
            raise PreconditionError("train config values must be positive")
        if self.learning_rate <= 0 or not 0 < self.lr_drop <= 1:
            raise PreconditionError("bad learning-rate settings")


class EnhancerModel:
    """Residual enhancer: out = saturate(input + tail(blocks(head(input)))).

    The tail conv is zero-initialized so a fresh model starts at (a
    saturated version of) the identity. ``saturate`` is "logistic"
    (scaled sigmoid around the skip sum, gain ``sat_gain``; keeps
    gradients alive at the range boundary) or "identity" (hard clamp;
    an exact pass-through for in-range residual-free inputs).
    """

    def __init__(self, width: int = 32, blocks: int = 4, saturate: str = "logistic",
                 sat_gain: float = 4.0, seed: int = 5):
        if saturate not in ("logistic", "identity"):
            raise PreconditionError(f"unknown saturate mode {saturate!r}")
        self.width, self.blocks, self.saturate, self.sat_gain = width, blocks, saturate, sat_gain
        self.head = Conv3x3(3, width, rng=derive_rng("enhancer", seed, "head"))
        self.body = []
        for i in range(blocks):
            c1 = Conv3x3(width, width, rng=derive_rng("enhancer", seed, i, 0))
            c2 = Conv3x3(width, width, rng=derive_rng("enhancer", seed, i, 1))
            self.body.append((c1, c2))
        self.tail = Conv3x3(width, 3, rng=None)  # zero init: start at identity

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict:
        out = {"head.w": self.head.params["w"], "head.b": self.head.params["b"]}
        for i, (c1, c2) in enumerate(self.body):
            out[f"block{i}.c1.w"] = c1.params["w"]
            out[f"block{i}.c1.b"] = c1.params["b"]
            out[f"block{i}.c2.w"] = c2.params["w"]
            out[f"block{i}.c2.b"] = c2.params["b"]
        out["tail.w"] = self.tail.params["w"]
        out["tail.b"] = self.tail.params["b"]
        return out

    def checksum(self) -> str:
        return params_checksum(self.params().values())

    def save(self, prefix: str) -> None:
        save_weights(prefix + ".llw", self.params())
        with open(prefix + ".meta", "w", encoding="utf-8") as f:
            f.write(
                f"width = {self.width}\nblocks = {self.blocks}\n"
                f"saturate = {self.saturate}\nsat_gain = {self.sat_gain!r}\n"
            )

    @classmethod
    def load(cls, prefix: str) -> "EnhancerModel":
        meta = {}
        with open(prefix + ".meta", "r", encoding="utf-8") as f:
            for line in f:
                key, _, value = line.partition("=")
                if value:
                    meta[key.strip()] = value.strip()
        model = cls(
            width=int(meta["width"]),
            blocks=int(meta["blocks"]),
            saturate=meta.get("saturate", "logistic"),
            sat_gain=float(meta.get("sat_gain", "4.0")),
        )
        load_weights_into(prefix + ".llw", model.params())
        return model

    # -- forward / backward -------------------------------------------------

    def _forward_tensor(self, t: np.ndarray):
        cache = {"input": t}
        z_head = self.head.forward(t)
        a = np.maximum(z_head, 0.0)
        cache["head"] = (t, z_head)
        block_caches = []
        for c1, c2 in self.body:
            z1 = c1.forward(a)
            r1 = np.maximum(z1, 0.0)
            z2 = c2.forward(r1)
            out = a + z2
            block_caches.append((a, z1, r1))
            a = out
        cache["blocks"] = block_caches
        cache["body_out"] = a
        resid = self.tail.forward(a)
        pre = t + resid
        cache["pre"] = pre
        if self.saturate == "logistic":
            y = _sigmoid(self.sat_gain * (pre - 0.5))
        else:
            y = np.clip(pre, 0.0, 1.0)
        return y, cache

    def enhance(self, low: np.ndarray) -> np.ndarray:
        """Enhance an (H, W, 3) image; output has the same shape, in [0,1]."""
        a = np.asarray(low, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ShapeMismatchError("enhancer expects an (H, W, 3) image")
        if min(a.shape[0], a.shape[1]) < 8:
            raise PreconditionError("enhancer needs min side >= 8")
        y, _ = self._forward_tensor(image_to_tensor(a))
        return tensor_to_image(y)

    def _backward_tensor(self, cache, g_y: np.ndarray):
        """Parameter gradients (and input gradient) of a scalar loss given
        its gradient w.r.t. the output tensor."""
        pre = cache["pre"]
        if self.saturate == "logistic":
            y = _sigmoid(self.sat_gain * (pre - 0.5))
            g_pre = g_y * self.sat_gain * y * (1.0 - y)
        else:
            g_pre = g_y * ((pre >= 0.0) & (pre <= 1.0))
        grads = {}
        g_body, tail_g = self.tail.backward(cache["body_out"], g_pre)
        grads["tail.w"], grads["tail.b"] = tail_g["w"], tail_g["b"]
        g = g_body
        for i in range(len(self.body) - 1, -1, -1):
            a_in, z1, r1 = cache["blocks"][i]
            c1, c2 = self.body[i]
            g_z2 = g
            g_r1, c2_g = c2.backward(r1, g_z2)
            g_z1 = g_r1 * (z1 > 0.0)
            g_a, c1_g = c1.backward(a_in, g_z1)
            g = g + g_a  # skip connection
            grads[f"block{i}.c1.w"], grads[f"block{i}.c1.b"] = c1_g["w"], c1_g["b"]
            grads[f"block{i}.c2.w"], grads[f"block{i}.c2.b"] = c2_g["w"], c2_g["b"]
        t, z_head = cache["head"]
        g_zh = g * (z_head > 0.0)
        g_in, head_g = self.head.backward(t, g_zh)
        grads["head.w"], grads["head.b"] = head_g["w"], head_g["b"]
        g_in = g_in + g_pre  # global skip
        return grads, g_in

    def loss_grads(self, low: np.ndarray, loss_fn):
        """Run ``loss_fn`` on the enhanced image and pull its image-space
        gradient back onto the parameters.

        loss_fn(enhanced_image) -> LossResult with .loss/.grad/.parts.
        """
        y, cache = self._forward_tensor(image_to_tensor(low))
        res = loss_fn(tensor_to_image(y))
        g_y = image_to_tensor(res.grad)
        grads, _ = self._backward_tensor(cache, g_y)
        return res, grads


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _paired_crop(rng, low, ref, size):
    h, w = low.shape[:2]
    s = min(size, h, w)
    i = int(rng.integers(0, h - s + 1))
    j = int(rng.integers(0, w - s + 1))
    return low[i : i + s, j : j + s], ref[i : i + s, j : j + s]


def _train(model, pairs, cfg, seed, epochs, lr, loss_builder, tag):
    if not pairs:
        raise PreconditionError("empty training set")
    for low, ref in pairs:
        if low.shape != ref.shape:
            raise ShapeMismatchError("paired images must share dimensions")
    params = model.params()
    opt = Adam(lr=lr)
    rng = derive_rng(tag, seed)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        totals: dict = {}
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for idx in batch:
                low, ref = _paired_crop(rng, *pairs[idx], cfg.crop)
                res, grads = model.loss_grads(low, loss_builder(ref))
                epoch_loss += res.loss
                for k, v in res.parts.items():
                    totals[k] = totals.get(k, 0.0) + float(v)
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            opt.step(params, acc)
        row = {"loss": epoch_loss / len(pairs)}
        row.update({k: v / len(pairs) for k, v in totals.items()})
        curve.append(row)
    return curve


def pretrain(model: EnhancerModel, pairs, cfg: EnhanceTrainConfig | None = None,
             seed: int = 0, epochs: int | None = None) -> list:
    """SSIM-loss supervised pretraining on (low, reference) pairs."""
    cfg = cfg or EnhanceTrainConfig()
    return _train(
        model, pairs, cfg, seed,
        cfg.pretrain_epochs if epochs is None else epochs,
        cfg.learning_rate,
        lambda ref: (lambda enh: ssim_loss(ref, enh)),
        "pretrain-enhancer",
    )


def finetune_joint(model: EnhancerModel, pairs, q_model,
                   fcfg: FidelityConfig | None = None,
                   jcfg: JointLossConfig | None = None,
                   cfg: EnhanceTrainConfig | None = None,
                   seed: int = 0, epochs: int | None = None) -> list:
    """Joint fidelity+quality fine-tuning at the dropped learning rate."""
    cfg = cfg or EnhanceTrainConfig()
    if q_model is None and (jcfg or JointLossConfig()).quality_weight != 0.0:
        raise PreconditionError("joint fine-tuning requires a quality model")
    return _train(
        model, pairs, cfg, seed,
        cfg.finetune_epochs if epochs is None else epochs,
        cfg.learning_rate * cfg.lr_drop,
        lambda ref: (lambda enh: joint_loss(ref, enh, q_model, fcfg, jcfg)),
        "finetune-enhancer",
    )
