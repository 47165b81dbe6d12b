"""Held-out evaluation: model signals -> HR readout -> metrics and CSV exports."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import DatasetManifest, VideoChunk, read_chunk
from .metrics import MetricsReport, bland_altman, metrics_report
from .model import EREA
from .numerics import no_grad
from .signal import (
    HR_BAND, SignalError, bandpass, detect_peaks, detrend, estimate_hr_fft, hrv_lf_hf,
    interbeat_intervals,
)

HRV_MIN_SECONDS = 30.0


def predict(model: EREA, chunk: VideoChunk) -> tuple[np.ndarray, np.ndarray]:
    """Run every non-overlapping window; return the concatenated signal and
    the attention maps stacked over time, (T_total, 4, Hq, Wq)."""
    signals, maps = [], []
    with no_grad():
        for window in chunk.windows(model.cfg.frames):
            y, m = model(window.frames)
            signals.append(y.data)
            maps.append(m.data)
    return np.concatenate(signals), np.concatenate(maps)


def hr_from_prediction(signal: np.ndarray, fs: float, band=HR_BAND) -> float:
    return estimate_hr_fft(bandpass(detrend(signal), band[0], band[1], fs=fs), fs=fs, band=band)


def green_channel_signal(chunk: VideoChunk) -> np.ndarray:
    """Baseline pulse trace: spatial mean of the green channel per frame."""
    return chunk.frames[..., 1].astype(np.float64).mean(axis=(1, 2))


def evaluate_signals(items, band=HR_BAND, postprocess: bool = True) -> list[tuple[str, float, float]]:
    """``items`` yields (source_id, predicted_signal, label, fs); rows sorted by id.

    With ``postprocess=False`` the prediction is read out exactly like the
    label (no detrend/bandpass), which makes label-vs-label a perfect oracle.
    """
    rows = []
    for source_id, signal, label, fs in items:
        gt = estimate_hr_fft(np.asarray(label, dtype=np.float64), fs=fs, band=band)
        if postprocess:
            pred = hr_from_prediction(signal, fs, band)
        else:
            pred = estimate_hr_fft(np.asarray(signal, dtype=np.float64), fs=fs, band=band)
        rows.append((source_id, gt, pred))
    return sorted(rows)


def evaluate_model(model: EREA, manifest: DatasetManifest, split: str = "test", band=HR_BAND):
    """Returns (MetricsReport, per-chunk HRV rows)."""
    items, hrv_rows = [], []
    for path in manifest.split(split):
        chunk = read_chunk(path)
        pred, _ = predict(model, chunk)
        label = chunk.ppg[:pred.size]
        items.append((chunk.source_id, pred, label, chunk.fs))
        if pred.size / chunk.fs >= HRV_MIN_SECONDS:
            hrv_rows.append(hrv_row(chunk.source_id, pred, chunk.fs, band))
    report = metrics_report(evaluate_signals(items, band))
    return report, [r for r in hrv_rows if r is not None]


def hrv_row(source_id: str, signal: np.ndarray, fs: float, band=HR_BAND):
    try:
        filtered = bandpass(detrend(signal), band[0], band[1], fs=fs)
        ibi = interbeat_intervals(detect_peaks(filtered, fs=fs, band=band), fs)
        rep = hrv_lf_hf(ibi)
        ratio = rep.lf_hf_ratio if rep.hf_power > 0 else float("nan")
    except SignalError:
        return None
    return (source_id, rep.lf_power, rep.hf_power, ratio,
            float("nan") if rep.rf_hz is None else rep.rf_hz)


def write_metrics_csv(path, report: MetricsReport) -> None:
    """One row per sample (source_id, gt_bpm, pred_bpm); the summary follows
    as ``#`` comment lines so the column contract stays exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "gt_bpm", "pred_bpm"])
        for sid, gt, pred in report.rows:
            w.writerow([sid, repr(float(gt)), repr(float(pred))])
        fh.write(f"# summary n={report.n} mae={report.mae!r} rmse={report.rmse!r} "
                 f"mape={report.mape!r} pearson_r={report.pearson_r!r}\n")


def write_bland_altman_csv(path, report: MetricsReport) -> None:
    gt = [r[1] for r in report.rows]
    pred = [r[2] for r in report.rows]
    ba = bland_altman(gt, pred)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# bias={ba.bias!r}\n# loa_low={ba.loa_low!r}\n# loa_high={ba.loa_high!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mean", "diff"])
        for m, d in zip(ba.means, ba.diffs):
            w.writerow([repr(float(m)), repr(float(d))])


def write_hrv_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "lf", "hf", "lf_hf_ratio", "rf_hz"])
        for row in sorted(rows):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def write_signal_csv(path, signal: np.ndarray, fs: float) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "value"])
        for i, v in enumerate(signal):
            w.writerow([repr(i / fs), repr(float(v))])


def read_signal_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_attention_csv(path, maps: np.ndarray) -> None:
    """Flat (t, expert, h, w, value) rows."""
    t, e, h, w = np.indices(maps.shape).reshape(4, -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "expert", "h", "w", "value"])
        for row in zip(t, e, h, w, maps.reshape(-1)):
            out.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3]), repr(float(row[4]))])


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
