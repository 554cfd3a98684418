"""Pseudo-MOS machinery: the four-parameter linear fusion of the metric
triple, score normalization, and the PLCC/SRCC evaluation statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FusionFitError, PreconditionError
from .metrics import MetricTriple
from .util import atomic_write_bytes

# shipped default mapping, calibrated upstream against third-party metric
# implementations; supply calibration data to re-fit against this registry
DEFAULT_COEFFS = (-1.8041, 2.6152, -0.2776, 0.2563)


@dataclass
class FusionModel:
    """raw = c0 + c1*fsim + c2*iwssim + c3*deepsim, then normalized to
    [0,1] by the (norm_lo, norm_hi) anchors with clamping."""

    coeffs: tuple[float, float, float, float]
    norm_lo: float = 0.0
    norm_hi: float = 1.0
    provenance: str = "unspecified"

    def __post_init__(self):
        self.coeffs = tuple(float(c) for c in self.coeffs)
        self.norm_lo = float(self.norm_lo)
        self.norm_hi = float(self.norm_hi)
        if not self.norm_hi > self.norm_lo:
            raise PreconditionError("norm_hi must exceed norm_lo")


def default_fusion_model() -> FusionModel:
    return FusionModel(DEFAULT_COEFFS, 0.0, 1.0, provenance="shipped-default")


@dataclass
class LabeledScoreSet:
    """Rows of (metric triple, target score) used to fit the fusion."""

    triples: list
    targets: np.ndarray
    provenance: str = "pseudo"

    def design_matrix(self) -> np.ndarray:
        rows = [[1.0, t.fsim, t.iwssim, t.deepsim] for t in self.triples]
        return np.array(rows, dtype=np.float64)


def raw_score(model: FusionModel, triple: MetricTriple) -> float:
    c = model.coeffs
    return float(c[0] + c[1] * triple.fsim + c[2] * triple.iwssim + c[3] * triple.deepsim)


def apply_fusion(model: FusionModel, triple: MetricTriple) -> float:
    raw = raw_score(model, triple)
    unit = (raw - model.norm_lo) / (model.norm_hi - model.norm_lo)
    return float(np.clip(unit, 0.0, 1.0))


def fit_fusion(data: LabeledScoreSet, ridge: float = 0.0) -> FusionModel:
    """Least squares via normal equations; ridge acts on the non-intercept
    block only. A singular system with ridge = 0 retries once at 1e-8."""
    x = data.design_matrix()
    y = np.asarray(data.targets, dtype=np.float64)
    if x.shape[0] < 5:
        raise PreconditionError(f"need >= 5 rows to fit, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise PreconditionError("non-finite entries in fit data")

    def solve(lam: float) -> np.ndarray:
        a = x.T @ x + lam * np.diag([0.0, 1.0, 1.0, 1.0])
        if np.linalg.cond(a) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned normal matrix")
        return np.linalg.solve(a, x.T @ y)

    try:
        beta = solve(ridge)
    except np.linalg.LinAlgError:
        if ridge > 0.0:
            raise FusionFitError("singular normal matrix") from None
        try:
            beta = solve(1e-8)
        except np.linalg.LinAlgError:
            raise FusionFitError("singular normal matrix even with fallback ridge") from None

    fitted = x @ beta
    lo, hi = float(fitted.min()), float(fitted.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0  # constant fit; keep anchors ordered
    return FusionModel(tuple(beta), lo, hi, provenance=f"fitted:{data.provenance}")


# ---------------------------------------------------------------------------
# correlation statistics
# ---------------------------------------------------------------------------

def _check_series(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise PreconditionError("correlation needs two equal-length 1-D series")
    if a.size < 3:
        raise PreconditionError("correlation needs at least 3 points")
    return a, b


def plcc(a, b) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _check_series(a, b)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da**2).sum()), np.sqrt((db**2).sum())
    if na == 0.0 or nb == 0.0:
        raise PreconditionError("zero variance series in PLCC")
    return float((da * db).sum() / (na * nb))


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; ties receive the mean of their rank span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(a, b) -> float:
    """Spearman rank-order correlation (Pearson over average ranks)."""
    a, b = _check_series(a, b)
    return plcc(average_ranks(a), average_ranks(b))


# ---------------------------------------------------------------------------
# persistence: small structured text file
# ---------------------------------------------------------------------------

def save_fusion_model(model: FusionModel, path: str) -> None:
    lines = ["# lumina fusion model"]
    for i, c in enumerate(model.coeffs, start=1):
        lines.append(f"lambda{i} = {c!r}")
    lines.append(f"norm_lo = {model.norm_lo!r}")
    lines.append(f"norm_hi = {model.norm_hi!r}")
    lines.append(f"provenance = {model.provenance}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_fusion_model(path: str) -> FusionModel:
    fields = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        coeffs = tuple(float(fields[f"lambda{i}"]) for i in range(1, 5))
        return FusionModel(
            coeffs,
            float(fields["norm_lo"]),
            float(fields["norm_hi"]),
            fields.get("provenance", "unspecified"),
        )
    except KeyError as exc:
        raise PreconditionError(f"{path}: missing fusion model field {exc}") from exc
