"""Minimal differentiable-layer engine.

Forward/backward passes for the handful of layer kinds the models need,
an Adam optimizer, the "LLW1" weights file, and a finite-difference
gradient checker. Tensors are float64 ndarrays shaped (C, H, W) or flat.
No graph machinery: models call layers explicitly and keep their own
caches, which is all a network this size requires.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import PreconditionError, ShapeMismatchError, WeightsFileError
from .util import derive_rng


def image_to_tensor(img: np.ndarray) -> np.ndarray:
    """(H, W, C) image -> contiguous (C, H, W) tensor."""
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float64)


def tensor_to_image(t: np.ndarray) -> np.ndarray:
    """(C, H, W) tensor -> (H, W, C) image layout."""
    return np.ascontiguousarray(t.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    """Forward/backward pair; ``params`` maps name -> ndarray (may be empty).

    ``backward(x, gout)`` returns ``(grad_in, grad_params)`` where
    ``grad_params`` mirrors the ``params`` dict.
    """

    params: dict

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, gout):
        raise NotImplementedError


class Conv3x3(Layer):
    """3x3 correlation, stride 1, zero padding 1 (shape preserving)."""

    def __init__(self, c_in: int, c_out: int, rng=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        if rng is None:
            w = np.zeros((c_out, c_in, 3, 3))
        else:
            w = he_uniform(rng, (c_out, c_in, 3, 3), fan_in=c_in * 9)
        self.params = {"w": w, "b": np.zeros(c_out)}

    def forward(self, x):
        if x.ndim != 3 or x.shape[0] != self.c_in:
            raise ShapeMismatchError(
                f"conv3x3 expects ({self.c_in}, H, W), got {x.shape}"
            )
        return _kernels.conv3x3_fwd(x, self.params["w"], self.params["b"])

    def backward(self, x, gout):
        if gout.shape != (self.c_out, x.shape[1], x.shape[2]):
            raise ShapeMismatchError("conv3x3 grad shape mismatch")
        gx, gw, gb = _kernels.conv3x3_bwd(x, self.params["w"], gout)
        return gx, {"w": gw, "b": gb}


class ReLU(Layer):
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, gout):
        return gout * (x > 0.0), {}


class Sigmoid(Layer):
    def forward(self, x):
        return 1.0 / (1.0 + np.exp(-x))

    def backward(self, x, gout):
        y = self.forward(x)
        return gout * y * (1.0 - y), {}


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped.

    Tie gradients go to the first maximum in row-major window order.
    """

    def forward(self, x):
        return _kernels.maxpool2_fwd(x)

    def backward(self, x, gout):
        return _kernels.maxpool2_bwd(x, gout), {}


class FullyConnected(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if rng is None:
            w = np.zeros((n_out, n_in))
        else:
            w = he_uniform(rng, (n_out, n_in), fan_in=n_in)
        self.params = {"w": w, "b": np.zeros(n_out)}

    def forward(self, x):
        if x.shape != (self.n_in,):
            raise ShapeMismatchError(f"fc expects ({self.n_in},), got {x.shape}")
        return self.params["w"] @ x + self.params["b"]

    def backward(self, x, gout):
        if gout.shape != (self.n_out,):
            raise ShapeMismatchError("fc grad shape mismatch")
        gin = self.params["w"].T @ gout
        return gin, {"w": np.outer(gout, x), "b": gout.copy()}


class GlobalMeanPool(Layer):
    """(C, H, W) -> per-channel spatial mean (C,)."""

    def forward(self, x):
        return x.mean(axis=(1, 2))

    def backward(self, x, gout):
        n = x.shape[1] * x.shape[2]
        return np.broadcast_to(gout[:, None, None] / n, x.shape).copy(), {}


def channel_std(x: np.ndarray) -> np.ndarray:
    """Per-channel population std of (C, H, W); exactly 0 for an exactly
    constant channel (no floating-point residue from the mean)."""
    sd = x.std(axis=(1, 2))
    flat = x.reshape(x.shape[0], -1)
    constant = flat.min(axis=1) == flat.max(axis=1)
    return np.where(constant, 0.0, sd)


class GlobalStdPool(Layer):
    """(C, H, W) -> per-channel population standard deviation (C,).

    Gradient at zero variance is defined as 0.
    """

    def forward(self, x):
        return channel_std(x)

    def backward(self, x, gout):
        n = x.shape[1] * x.shape[2]
        mu = x.mean(axis=(1, 2), keepdims=True)
        sd = channel_std(x)
        safe = np.where(sd > 0.0, sd, 1.0)
        scale = np.where(sd > 0.0, gout / (n * safe), 0.0)
        return scale[:, None, None] * (x - mu), {}


class BilinearFuse(Layer):
    """Flattened outer product of two equal-length vectors, followed by
    signed square root and (optionally) L2 normalization.

    The zero vector maps to the zero vector; the signed-sqrt derivative
    at exactly 0 is defined as 0.
    """

    def __init__(self, normalize: bool = True):
        super().__init__()
        self.normalize = normalize

    def forward(self, ab):
        a, b = ab
        if a.shape != b.shape or a.ndim != 1:
            raise ShapeMismatchError("bilinear fuse needs two equal-length vectors")
        z = np.outer(a, b).ravel()
        y1 = np.sign(z) * np.sqrt(np.abs(z))
        if not self.normalize:
            return y1
        n = np.linalg.norm(y1)
        return y1 / n if n > 0.0 else y1

    def backward(self, ab, gout):
        a, b = ab
        d = a.shape[0]
        z = np.outer(a, b).ravel()
        y1 = np.sign(z) * np.sqrt(np.abs(z))
        if self.normalize:
            n = np.linalg.norm(y1)
            if n > 0.0:
                y = y1 / n
                g1 = (gout - y * np.dot(y, gout)) / n
            else:
                g1 = gout.copy()
        else:
            g1 = gout
        dz = np.where(z != 0.0, 0.5 / np.sqrt(np.abs(np.where(z != 0.0, z, 1.0))), 0.0)
        gz = (g1 * dz).reshape(d, d)
        return (gz @ b, gz.T @ a), {}


class Sequential(Layer):
    """Ordered layer chain with an explicit activation cache."""

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_cached(self, x):
        xs = [x]
        for layer in self.layers:
            xs.append(layer.forward(xs[-1]))
        return xs[-1], xs[:-1]

    def backward_from(self, xs, gout):
        grads = [None] * len(self.layers)
        g = gout
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads[i] = self.layers[i].backward(xs[i], g)
        return g, grads

    def backward(self, x, gout):
        _, xs = self.forward_cached(x)
        gin, per_layer = self.backward_from(xs, gout)
        merged = {}
        for i, gdict in enumerate(per_layer):
            for k, v in gdict.items():
                merged[f"{i}.{k}"] = v
        return gin, merged

    def named_params(self, prefix: str = "") -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"{prefix}{i}.{k}"] = v
        return out


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-uniform init, quantized to float32 values (kept in float64).

    The float32 cast makes freshly initialized parameters exactly
    representable in the weights file, so save -> load is the identity
    for never-trained (frozen) parameter sets.
    """
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape)
    return w.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    """Textbook Adam with bias correction; state keyed by parameter name."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# "LLW1" weights file
# ---------------------------------------------------------------------------

_MAGIC = b"LLW1"


def save_weights(path: str, params: dict) -> None:
    """Serialize name -> array pairs as little-endian float32 payloads."""
    from .util import atomic_write_bytes

    blob = bytearray(_MAGIC)
    blob += struct.pack("<I", len(params))
    for name, arr in params.items():
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", a.ndim)
        for d in a.shape:
            blob += struct.pack("<I", d)
        blob += a.tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_weights(path: str) -> dict:
    """Read an LLW1 file into name -> float64 arrays; duplicates rejected."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise WeightsFileError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4
    try:
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            a = np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            if name in out:
                raise WeightsFileError(f"{path}: duplicate entry {name!r}")
            out[name] = a.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise WeightsFileError(f"{path}: truncated or corrupt: {exc}") from exc
    return out


def load_weights_into(path: str, params: dict) -> None:
    """Load a file whose entries must match ``params`` names and shapes."""
    loaded = load_weights(path)
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise WeightsFileError(
            f"{path}: entry names mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    for name, arr in loaded.items():
        if arr.shape != params[name].shape:
            raise WeightsFileError(
                f"{path}: shape mismatch for {name!r}: {arr.shape} vs {params[name].shape}"
            )
        params[name][...] = arr


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    passed: bool
    worst: str


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Worst elementwise relative error; entries where both sides are below
    ``floor`` count as exact agreement."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    err = np.where(scale < floor, 0.0, diff / np.where(scale < floor, 1.0, scale))
    return float(err.max()) if err.size else 0.0


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(
    net: Sequential,
    x: np.ndarray,
    loss_fn=None,
    tol: float = 1e-5,
    h: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Check ``net`` backward against central differences.

    ``loss_fn(y) -> (scalar, dL/dy)`` defines the scalar objective;
    the default is the projection L = <c, y> with a fixed random c.
    The report covers the input and every parameter tensor.
    """
    y0, _ = net.forward_cached(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(y0)):
        raise PreconditionError("non-finite forward output in gradient check")
    if loss_fn is None:
        c = derive_rng("gradcheck", seed).standard_normal(y0.shape)
        loss_fn = lambda y: (float(np.sum(y * c)), c)

    def loss_given(inp):
        value, _ = loss_fn(net.forward(inp))
        if not np.isfinite(value):
            raise PreconditionError("non-finite loss in gradient check")
        return float(value)

    _, gout = loss_fn(y0)
    gin, grads = net.backward(x, gout)
    worst, worst_err = "input", rel_err(gin, fd_gradient(loss_given, x.copy(), h))
    for i, layer in enumerate(net.layers):
        for pname, p in layer.params.items():
            analytic = grads[f"{i}.{pname}"]

            def loss_at(pv, layer=layer, pname=pname):
                old = layer.params[pname]
                layer.params[pname] = pv
                try:
                    return loss_given(x)
                finally:
                    layer.params[pname] = old

            numeric = fd_gradient(loss_at, p.copy(), h)
            e = rel_err(analytic, numeric)
            if e > worst_err:
                worst, worst_err = f"layer{i}.{pname}", e
    return GradCheckReport(worst_err, tol, worst_err < tol, worst)
