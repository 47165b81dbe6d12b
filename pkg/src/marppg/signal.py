"""Pulse-signal post-processing: detrending, band selection, HR and HRV readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.ndimage import maximum_filter1d
from scipy.sparse.linalg import spsolve

HR_BAND = (0.75, 2.5)
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)
RF_BAND = (0.1, 0.5)
IBI_RANGE = (0.33, 2.0)
IBI_RESAMPLE_HZ = 4.0


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class RppgSignal:
    samples: np.ndarray
    fs: float = 30.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise SignalError(f"signal must be 1-D with >= 2 samples, got shape {s.shape}")
        if self.fs <= 0:
            raise SignalError("sampling rate must be positive")
        if not np.all(np.isfinite(s)):
            raise SignalError("signal contains non-finite values")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class IbiSeries:
    times: np.ndarray  # all beat times, seconds
    intervals: np.ndarray  # kept intervals, seconds
    ends: np.ndarray  # time of the beat closing each kept interval


@dataclass(frozen=True)
class HrvReport:
    lf_power: float
    hf_power: float
    lf_raw: float
    hf_raw: float
    rf_hz: float | None = None

    @property
    def lf_hf_ratio(self) -> float:
        if self.hf_power <= 0:
            raise SignalError("LF/HF ratio undefined: no HF power")
        return self.lf_power / self.hf_power


def _samples(s) -> tuple[np.ndarray, float]:
    if isinstance(s, RppgSignal):
        return s.samples, s.fs
    return np.asarray(s, dtype=np.float64), 30.0


def detrend(s, lam: float = 100.0):
    """Smoothness-prior detrending: subtract (I + lam^2 D2'D2)^-1 s."""
    x, fs = _samples(s)
    n = x.size
    if n < 3:
        raise SignalError("detrend needs at least 3 samples")
    d2 = sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n))
    system = (sparse.identity(n) + lam ** 2 * (d2.T @ d2)).tocsc()
    trend = spsolve(system, x)
    out = x - trend
    return RppgSignal(out, fs) if isinstance(s, RppgSignal) else out


def bandpass(s, lo_hz: float = HR_BAND[0], hi_hz: float = HR_BAND[1], fs: float | None = None):
    """Zero-phase FFT mask keeping bins with lo <= |f| <= hi."""
    x, fs0 = _samples(s)
    fs = fs0 if fs is None else fs
    if not 0 < lo_hz < hi_hz < fs / 2:
        raise SignalError(f"invalid band [{lo_hz}, {hi_hz}] for fs={fs}")
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / fs)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    out = np.fft.irfft(spec, n=x.size)
    return RppgSignal(out, fs) if isinstance(s, RppgSignal) else out


def _peak_frequency(x: np.ndarray, fs: float, band: tuple[float, float], pad_factor: int = 8,
                    window: bool = True) -> tuple[float, float]:
    """Frequency and power of the periodogram maximum inside ``band``,
    refined by parabolic interpolation of the three bins around it."""
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(max(n * pad_factor, 2))))
    xw = x * np.hanning(n) if window else x
    power = np.abs(np.fft.rfft(xw, n=nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    idx = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if idx.size == 0:
        raise SignalError("no spectral bins inside band")
    k = idx[np.argmax(power[idx])]
    peak = power[k]
    if 0 < k < power.size - 1:
        a, b, c = power[k - 1], power[k], power[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            delta = 0.5 * (a - c) / denom
            return freqs[k] + delta * (freqs[1] - freqs[0]), peak
    return freqs[k], peak


def estimate_hr_fft(s, fs: float | None = None, band: tuple[float, float] = HR_BAND) -> float:
    """Heart rate in BPM from the Hann-windowed, 8x zero-padded periodogram."""
    x, fs0 = _samples(s)
    fs = fs0 if fs is None else fs
    if not np.any(x):
        raise SignalError("no pulse energy")
    freq, _ = _peak_frequency(x - x.mean(), fs, band)
    return 60.0 * freq


def detect_peaks(s, fs: float | None = None, band: tuple[float, float] = HR_BAND) -> np.ndarray:
    """Beat indices: local maxima above 0.6x the rolling max over 1.5 beat
    periods, at least half a beat period apart."""
    x, fs0 = _samples(s)
    fs = fs0 if fs is None else fs
    hr_hz = estimate_hr_fft(x, fs, band) / 60.0
    window = max(3, int(round(1.5 / hr_hz * fs)))
    min_sep = 0.5 * fs / hr_hz
    rolling = maximum_filter1d(x, size=window, mode="nearest")
    interior = np.arange(1, x.size - 1)
    is_max = (x[interior] > x[interior - 1]) & (x[interior] >= x[interior + 1])
    cand = interior[is_max & (x[interior] >= 0.6 * rolling[interior]) & (x[interior] > 0)]
    keep: list[int] = []
    for i in cand[np.argsort(-x[cand], kind="stable")]:
        if all(abs(i - j) >= min_sep for j in keep):
            keep.append(int(i))
    return np.array(sorted(keep), dtype=np.int64)


def interbeat_intervals(peaks, fs: float) -> IbiSeries:
    """Beat-to-beat intervals, dropping intervals outside [0.33, 2.0] s."""
    peaks = np.asarray(peaks)
    if peaks.size < 3:
        raise SignalError(f"need at least 3 peaks, got {peaks.size}")
    times = peaks / float(fs)
    intervals = np.diff(times)
    ok = (intervals >= IBI_RANGE[0]) & (intervals <= IBI_RANGE[1])
    return IbiSeries(times=times, intervals=intervals[ok], ends=times[1:][ok])


def _valid_ibi(ibi: IbiSeries) -> tuple[np.ndarray, np.ndarray]:
    return ibi.ends, ibi.intervals


def _ibi_spectrum(ibi: IbiSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t, rr = _valid_ibi(ibi)
    if rr.size < 8 or t[-1] - t[0] < 30.0:
        raise SignalError("HRV needs >= 8 valid intervals spanning >= 30 s")
    grid = np.arange(t[0], t[-1], 1.0 / IBI_RESAMPLE_HZ)
    x = CubicSpline(t, rr)(grid)
    x = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(grid.size * 8)))
    power = np.abs(np.fft.rfft(x * np.hanning(x.size), n=nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / IBI_RESAMPLE_HZ)
    return freqs, power, rr


def hrv_lf_hf(ibi: IbiSeries) -> HrvReport:
    """LF/HF power of the 4 Hz resampled interval series, normalized to lf+hf=1."""
    freqs, power, rr = _ibi_spectrum(ibi)
    lf = float(power[(freqs >= LF_BAND[0]) & (freqs < LF_BAND[1])].sum())
    hf = float(power[(freqs >= HF_BAND[0]) & (freqs <= HF_BAND[1])].sum())
    total = lf + hf
    # below this the series is constant up to rounding
    floor = 1e-20 * float(np.mean(rr)) ** 2 * power.size
    if total <= floor:
        return HrvReport(0.0, 0.0, lf, hf, None)
    try:
        rf = respiratory_frequency(ibi)
    except SignalError:
        rf = None
    lf_n = lf / total
    return HrvReport(lf_n, 1.0 - lf_n, lf, hf, rf)


def respiratory_frequency(ibi: IbiSeries) -> float:
    """Respiratory sinus arrhythmia readout: IBI spectral peak in [0.1, 0.5] Hz."""
    freqs, power, rr = _ibi_spectrum(ibi)
    band = (freqs >= RF_BAND[0]) & (freqs <= RF_BAND[1])
    floor = 1e-20 * float(np.mean(rr)) ** 2 * power.size
    if power[band].sum() <= floor:
        raise SignalError("no respiratory modulation")
    t, rr = _valid_ibi(ibi)
    grid = np.arange(t[0], t[-1], 1.0 / IBI_RESAMPLE_HZ)
    x = CubicSpline(t, rr)(grid)
    freq, _ = _peak_frequency(x - x.mean(), IBI_RESAMPLE_HZ, RF_BAND)
    return float(freq)
