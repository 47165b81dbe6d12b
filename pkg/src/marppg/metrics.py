"""Heart-rate agreement metrics and Bland-Altman rows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


def _pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if gt.size == 0 or gt.size != pred.size:
        raise MetricsError(f"need equal non-empty inputs, got {gt.size} and {pred.size}")
    return gt, pred


def mae(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    return float(np.mean(np.abs(gt - pred)))


def rmse(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    return float(np.sqrt(np.mean((gt - pred) ** 2)))


def mape(gt, pred) -> float:
    """Mean absolute percentage error as a fraction (0.1 == 10 %)."""
    gt, pred = _pair(gt, pred)
    if np.any(gt == 0):
        raise MetricsError("MAPE undefined for zero ground truth")
    return float(np.mean(np.abs((gt - pred) / gt)))


def pearson_r(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    if gt.size < 2:
        raise MetricsError("pearson_r needs at least 2 samples")
    zc, yc = gt - gt.mean(), pred - pred.mean()
    szz, syy = np.sum(zc * zc), np.sum(yc * yc)
    if szz == 0 or syy == 0:
        raise MetricsError("pearson_r undefined for zero-variance input")
    return float(np.sum(zc * yc) / np.sqrt(szz * syy))


@dataclass(frozen=True)
class BlandAltman:
    bias: float
    loa_low: float
    loa_high: float
    means: np.ndarray
    diffs: np.ndarray


def bland_altman(gt, pred) -> BlandAltman:
    """Bias and 95 % limits of agreement (population std) of pred - gt."""
    gt, pred = _pair(gt, pred)
    if gt.size < 2:
        raise MetricsError("Bland-Altman needs at least 2 rows")
    diffs = pred - gt
    bias = float(diffs.mean())
    spread = 1.96 * float(diffs.std())
    return BlandAltman(bias, bias - spread, bias + spread, (gt + pred) / 2, diffs)


@dataclass
class MetricsReport:
    n: int
    mae: float
    rmse: float
    mape: float
    pearson_r: float
    rows: list[tuple[str, float, float]] = field(default_factory=list)


def metrics_report(rows: list[tuple[str, float, float]]) -> MetricsReport:
    """Summarize (source_id, gt_bpm, pred_bpm) rows; r is NaN when undefined."""
    gt = [r[1] for r in rows]
    pred = [r[2] for r in rows]
    try:
        r = pearson_r(gt, pred)
    except MetricsError:
        r = float("nan")
    return MetricsReport(len(rows), mae(gt, pred), rmse(gt, pred), mape(gt, pred), r, list(rows))
