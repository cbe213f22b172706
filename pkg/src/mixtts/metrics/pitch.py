"""YIN-style pitch tracking and the pitch-derived metrics (F0 RMSE, VUV F1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import SAMPLE_RATE, Waveform


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class PitchConfig:
    window_s: float = 0.025
    hop_s: float = 0.010
    fmin: float = 50.0
    fmax: float = 550.0
    threshold: float = 0.15
    # frames quieter than this RMS are unvoiced without looking at the CMNDF
    silence_rms: float = 1e-4


@dataclass
class F0Track:
    f0: np.ndarray  # Hz, 0 where unvoiced
    frame_hop: float  # seconds

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        if self.f0.ndim != 1:
            raise ValueError("f0 must be 1-D")
        if np.any(self.f0 < 0) or not np.all(np.isfinite(self.f0)):
            raise ValueError("f0 must be finite and nonnegative")

    @property
    def voicing(self) -> np.ndarray:
        return self.f0 > 0

    def __len__(self) -> int:
        return len(self.f0)


def _cmndf(frames: np.ndarray, width: int, max_lag: int) -> np.ndarray:
    """Cumulative mean normalized difference, rows = frames, cols = lag 0..max_lag."""
    n = frames.shape[1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, size)
    head = np.fft.rfft(frames[:, :width], size)
    # acf[tau] = sum_{j<width} x_j x_{j+tau}
    acf = np.fft.irfft(np.conj(head) * spec, size)[:, : max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy0 = sq[:, width][:, None]
    energy_tau = sq[:, lags + width] - sq[:, lags]
    diff = np.maximum(energy0 + energy_tau - 2 * acf, 0.0)
    diff[:, 0] = 0.0
    cum = np.cumsum(diff[:, 1:], axis=1)
    out = np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = diff[:, 1:] * lags[1:] / cum
    out[:, 1:] = np.where(cum > 0, norm, 1.0)
    return out


def extract_f0(w: Waveform, cfg: PitchConfig = PitchConfig()) -> F0Track:
    if w.sample_rate != SAMPLE_RATE:
        raise MetricError(f"pitch tracking expects {SAMPLE_RATE} Hz audio, got {w.sample_rate}")
    sr = w.sample_rate
    width = int(round(cfg.window_s * sr))
    hop = int(round(cfg.hop_s * sr))
    if len(w) < width:
        raise MetricError(f"waveform of {len(w)} samples is shorter than one pitch window ({width})")
    min_lag = int(np.floor(sr / cfg.fmax))
    max_lag = int(np.ceil(sr / cfg.fmin))
    n_frames = 1 + (len(w) - width) // hop
    x = np.concatenate([w.samples, np.zeros(max_lag + 1)])
    idx = np.arange(n_frames)[:, None] * hop + np.arange(width + max_lag + 1)[None]
    frames = x[idx]
    d = _cmndf(frames, width, max_lag)
    rms = np.sqrt(np.mean(frames[:, :width] ** 2, axis=1))

    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        if rms[i] < cfg.silence_rms:
            continue
        row = d[i]
        below = np.nonzero(row[min_lag : max_lag + 1] < cfg.threshold)[0]
        if len(below) == 0:
            continue
        tau = min_lag + int(below[0])
        while tau + 1 <= max_lag and row[tau + 1] < row[tau]:
            tau += 1
        shift = 0.0
        if min_lag < tau < max_lag:
            a, b, c = row[tau - 1], row[tau], row[tau + 1]
            den = a - 2 * b + c
            if den > 0:
                shift = 0.5 * (a - c) / den
        f0[i] = np.clip(sr / (tau + shift), cfg.fmin, cfg.fmax)
    return F0Track(f0, hop / sr)


def _align(a: F0Track, b: F0Track) -> tuple[np.ndarray, np.ndarray]:
    n = min(len(a), len(b))
    return a.f0[:n], b.f0[:n]


def f0_rmse(a: F0Track, b: F0Track) -> float:
    fa, fb = _align(a, b)
    both = (fa > 0) & (fb > 0)
    if not both.any():
        raise MetricError("no frames are voiced in both tracks")
    return float(np.sqrt(np.mean((fa[both] - fb[both]) ** 2)))


def vuv_f1(a: F0Track, b: F0Track) -> float:
    """F1 of b's voicing decisions with a's voicing as ground truth.

    Two tracks with no voiced frames at all agree perfectly and score 1.
    """
    fa, fb = _align(a, b)
    va, vb = fa > 0, fb > 0
    tp = int(np.sum(va & vb))
    fp = int(np.sum(~va & vb))
    fn = int(np.sum(va & ~vb))
    if tp + fp + fn == 0:
        return 1.0
    return f1_from_counts(tp, fp, fn)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)
