"""Spectral distances: log-amplitude RMSE, mel-cepstral distortion, MFCC FID."""

from __future__ import annotations

import numpy as np
from scipy.fft import dct

from ..dsp import MelConfig, Waveform, melspectrogram, resample, stft
from .pitch import MetricError

LAS_FLOOR = 1e-5
N_MFCC = 13
# dB per unit Euclidean distance between natural-log cepstra
MCD_FACTOR = 10.0 * np.sqrt(2.0) / np.log(10.0)


def _check_rates(a: Waveform, b: Waveform) -> None:
    if a.sample_rate != b.sample_rate:
        raise MetricError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")


def log_amplitude(w: Waveform, n_fft: int = 1024, hop: int = 256, floor: float = LAS_FLOOR) -> np.ndarray:
    return np.log10(np.maximum(np.abs(stft(w.samples, n_fft, hop, n_fft)), floor))


def las_rmse(a: Waveform, b: Waveform, floor: float = LAS_FLOOR) -> float:
    _check_rates(a, b)
    la, lb = log_amplitude(a, floor=floor), log_amplitude(b, floor=floor)
    n = min(la.shape[1], lb.shape[1])
    return float(np.sqrt(np.mean((la[:, :n] - lb[:, :n]) ** 2)))


def mfcc(w: Waveform, n_mfcc: int = N_MFCC, cfg: MelConfig | None = None) -> np.ndarray:
    """(frames, n_mfcc) cepstra: orthonormal DCT-II of the natural-log mel spectrum."""
    if cfg is None:
        cfg = MelConfig(sample_rate=w.sample_rate, fmax=min(8000.0, w.sample_rate / 2))
    logmel = melspectrogram(w, cfg).values
    return dct(logmel, type=2, norm="ortho", axis=0)[:n_mfcc].T


def dtw(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-sum monotone path through cost (steps (1,1), (1,0), (0,1)).

    Returns (total cost, path from (0, 0) to (n-1, m-1)).
    """
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    # anti-diagonal sweep: every cell on diagonal s depends only on s-1 and s-2
    for s in range(2, n + m + 1):
        i = np.arange(max(1, s - m), min(n, s - 1) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        steps = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(steps, key=lambda p: acc[p])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def mcd_from_cepstra(ca: np.ndarray, cb: np.ndarray, use_dtw: bool = True) -> float:
    """MCD in dB between (frames, dims) cepstra, c0 already removed."""
    if ca.shape[1] != cb.shape[1]:
        raise MetricError("cepstral dimensions differ")
    if use_dtw:
        cost = np.sqrt(((ca[:, None, :] - cb[None, :, :]) ** 2).sum(-1))
        _, path = dtw(cost)
        pi, pj = np.array(path).T
        dist = cost[pi, pj]
    else:
        n = min(len(ca), len(cb))
        dist = np.sqrt(((ca[:n] - cb[:n]) ** 2).sum(-1))
    return float(MCD_FACTOR * dist.mean())


def mcd(a: Waveform, b: Waveform, use_dtw: bool = True) -> float:
    _check_rates(a, b)
    return mcd_from_cepstra(mfcc(a)[:, 1:], mfcc(b)[:, 1:], use_dtw)


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(frames_a: np.ndarray, frames_b: np.ndarray) -> float:
    """Fréchet distance between Gaussians fitted to two (n, dims) frame sets."""
    if len(frames_a) < 2 or len(frames_b) < 2:
        raise MetricError("need at least two frames per set")
    mu_a, mu_b = frames_a.mean(0), frames_b.mean(0)
    cov_a = np.atleast_2d(np.cov(frames_a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(frames_b, rowvar=False))
    root_a = _sqrtm_psd(cov_a)
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(_sym(root_a @ cov_b @ root_a)), 0, None)).sum()
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2 * cross)
    return max(value, 0.0)


def _sym(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2


def mfcc_fid(set_a: list[Waveform], set_b: list[Waveform]) -> float:
    if len(set_a) < 2 or len(set_b) < 2:
        raise MetricError("mfcc_fid needs at least two utterances per set")
    rate = set_a[0].sample_rate
    pool = lambda ws: np.concatenate([mfcc(w if w.sample_rate == rate else resample(w, rate)) for w in ws])
    return frechet_distance(pool(set_a), pool(set_b))
