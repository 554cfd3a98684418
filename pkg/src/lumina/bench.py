"""Correlation benchmark over the metric registry.

Runs every registered metric on a labeled set of (reference, test, MOS)
rows, fits the score fusion on a fit split, and reports PLCC/SRCC per
metric and for the fused model on both splits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .fusion import LabeledScoreSet, apply_fusion, fit_fusion, plcc, srcc
from .metrics import REGISTRY, MetricTriple, compute_metric
from .util import derive_rng, parallel_map

# externally reported correlations for a fused model of this shape on a
# tailored synthetic-distortion benchmark; different data and metric
# implementations, shown for context only and not reproducible here
REFERENCE_FUSED_PLCC = 0.8643
REFERENCE_FUSED_SRCC = 0.8182

FUSION_OPERANDS = ("fsim", "iwssim_v", "deepsim")


@dataclass
class BenchReport:
    dataset_id: str
    rows: int
    fit_rows: int
    holdout_rows: int
    per_metric: dict = field(default_factory=dict)
    fused: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = [
            f"# dataset: {self.dataset_id}  rows: {self.rows}  fit: {self.fit_rows}  holdout: {self.holdout_rows}",
            "metric\tfit_plcc\tfit_srcc\tholdout_plcc\tholdout_srcc",
        ]
        for name, r in list(self.per_metric.items()) + [("fused", self.fused)]:
            lines.append(
                f"{name}\t{r['fit_plcc']:.6f}\t{r['fit_srcc']:.6f}"
                f"\t{r['holdout_plcc']:.6f}\t{r['holdout_srcc']:.6f}"
            )
        lines.append(
            f"# context: externally reported fused correlations PLCC {REFERENCE_FUSED_PLCC}"
            f" / SRCC {REFERENCE_FUSED_SRCC} on different data with different metric"
            " implementations; not reproducible from this harness"
        )
        return "\n".join(lines) + "\n"


def _corr_pair(pred, target):
    return {"plcc": plcc(pred, target), "srcc": srcc(pred, target)}


def run_bench(
    labeled_rows,
    fit_fraction: float = 0.6,
    seed: int = 0,
    backbone=None,
    ridge: float = 0.0,
    dataset_id: str = "unnamed",
) -> BenchReport:
    """``labeled_rows`` is a sequence of (reference, test, mos) triples.

    Needs at least 20 rows and non-degenerate labels on both splits.
    """
    rows = list(labeled_rows)
    if len(rows) < 20:
        raise PreconditionError(f"benchmark needs >= 20 rows, got {len(rows)}")
    mos = np.array([r[2] for r in rows], dtype=np.float64)
    if np.ptp(mos) == 0.0:
        raise PreconditionError("degenerate labels: all MOS values equal")

    def score_row(row):
        ref, test, _ = row
        return {
            mid: compute_metric(mid, ref, test, backbone).value for mid in REGISTRY
        }

    scored = parallel_map(score_row, rows)
    columns = {mid: np.array([s[mid] for s in scored]) for mid in REGISTRY}

    order = derive_rng("bench-split", seed).permutation(len(rows))
    n_fit = max(5, int(round(fit_fraction * len(rows))))
    n_fit = min(n_fit, len(rows) - 3)
    fit_idx, hold_idx = order[:n_fit], order[n_fit:]

    triples = [
        MetricTriple(columns["fsim"][i], columns["iwssim_v"][i], columns["deepsim"][i])
        for i in range(len(rows))
    ]
    model = fit_fusion(
        LabeledScoreSet([triples[i] for i in fit_idx], mos[fit_idx], provenance=dataset_id),
        ridge=ridge,
    )
    fused_pred = np.array([apply_fusion(model, t) for t in triples])

    report = BenchReport(dataset_id, len(rows), len(fit_idx), len(hold_idx))
    for mid in REGISTRY:
        col = columns[mid]
        report.per_metric[mid] = {
            "fit_plcc": plcc(col[fit_idx], mos[fit_idx]),
            "fit_srcc": srcc(col[fit_idx], mos[fit_idx]),
            "holdout_plcc": plcc(col[hold_idx], mos[hold_idx]),
            "holdout_srcc": srcc(col[hold_idx], mos[hold_idx]),
        }
    report.fused = {
        "fit_plcc": plcc(fused_pred[fit_idx], mos[fit_idx]),
        "fit_srcc": srcc(fused_pred[fit_idx], mos[fit_idx]),
        "holdout_plcc": plcc(fused_pred[hold_idx], mos[hold_idx]),
        "holdout_srcc": srcc(fused_pred[hold_idx], mos[hold_idx]),
    }

    best_operand = max(abs(report.per_metric[m]["fit_plcc"]) for m in FUSION_OPERANDS)
    if report.fused["fit_plcc"] < best_operand - 1e-9:
        raise PreconditionError(
            "fit-split optimality violated: fused PLCC below an operand metric"
        )
    return report
