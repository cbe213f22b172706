"""Short-time objective intelligibility (Taal et al., 2011)."""

from __future__ import annotations

import numpy as np

from ..dsp import Waveform, resample
from .pitch import MetricError

FS = 10000
FRAME = 256
NFFT = 512
N_BANDS = 15
MIN_FREQ = 150.0
N_SEGMENT = 30  # 384 ms of 128-sample hops at 10 kHz
BETA_DB = -15.0
DYN_RANGE_DB = 40.0
EPS = np.finfo(np.float64).eps


def _window() -> np.ndarray:
    return np.hanning(FRAME + 2)[1:-1]


def third_octave_bands() -> np.ndarray:
    """(N_BANDS, NFFT//2 + 1) 0/1 matrix grouping DFT bins into third-octave bands."""
    freqs = np.linspace(0, FS, NFFT + 1)[: NFFT // 2 + 1]
    k = np.arange(N_BANDS)
    low = MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    high = MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((N_BANDS, len(freqs)))
    for i in range(N_BANDS):
        lo = int(np.argmin((freqs - low[i]) ** 2))
        hi = int(np.argmin((freqs - high[i]) ** 2))
        obm[i, lo:hi] = 1.0
    return obm


def _frames(x: np.ndarray) -> np.ndarray:
    hop = FRAME // 2
    starts = np.arange(0, len(x) - FRAME + 1, hop)
    return x[starts[:, None] + np.arange(FRAME)] * _window()


def remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames more than DYN_RANGE_DB below the loudest frame of x, from both."""
    fx, fy = _frames(x), _frames(y)
    energy = 20 * np.log10(np.linalg.norm(fx, axis=1) + EPS)
    keep = energy > energy.max() - DYN_RANGE_DB
    fx, fy = fx[keep], fy[keep]
    hop = FRAME // 2
    n = (len(fx) - 1) * hop + FRAME if len(fx) else 0
    out_x, out_y = np.zeros(n), np.zeros(n)
    for i in range(len(fx)):
        out_x[i * hop : i * hop + FRAME] += fx[i]
        out_y[i * hop : i * hop + FRAME] += fy[i]
    return out_x, out_y


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x), NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def stoi(ref: Waveform, deg: Waveform) -> float:
    """Both signals are resampled to 10 kHz and truncated to a common length.

    Raises when fewer than 30 non-silent frames remain, since the measure is
    undefined on a single short segment.
    """
    x = resample(ref, FS).samples if ref.sample_rate != FS else ref.samples
    y = resample(deg, FS).samples if deg.sample_rate != FS else deg.samples
    n = min(len(x), len(y))
    x, y = remove_silent_frames(x[:n], y[:n])
    obm = third_octave_bands()
    xt = _band_envelopes(x, obm) if len(x) >= FRAME else np.zeros((N_BANDS, 0))
    yt = _band_envelopes(y, obm) if len(y) >= FRAME else np.zeros((N_BANDS, 0))
    if xt.shape[1] < N_SEGMENT:
        raise MetricError(f"stoi needs at least {N_SEGMENT} non-silent frames, got {xt.shape[1]}")
    idx = np.arange(N_SEGMENT, xt.shape[1] + 1)[:, None] - N_SEGMENT + np.arange(N_SEGMENT)
    xs = np.transpose(xt[:, idx], (1, 0, 2))  # (segments, bands, N)
    ys = np.transpose(yt[:, idx], (1, 0, 2))
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + EPS)
    clip = 10 ** (-BETA_DB / 20)
    yp = np.minimum(ys * scale, xs * (1 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + EPS
    return float(np.sum(xs * yp) / (xs.shape[0] * xs.shape[1]))
