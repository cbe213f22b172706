"""Monotonic alignment search between tokens and mel frames."""

from __future__ import annotations

import itertools

import numpy as np


def monotonic_align(log_lik: np.ndarray) -> np.ndarray:
    """Best monotonic, surjective token->frame segmentation.

    ``log_lik`` is (L, T): log-likelihood of frame j under token i.  Returns
    integer durations (L,), each >= 1, summing to T, that maximize the summed
    log-likelihood along the path.
    """
    log_lik = np.asarray(log_lik, dtype=np.float64)
    L, T = log_lik.shape
    if L < 1:
        raise ValueError("need at least one token")
    if L > T:
        raise ValueError(f"cannot align {L} tokens to {T} frames")
    Q = np.full((L, T), -np.inf)
    Q[0, 0] = log_lik[0, 0]
    for j in range(1, T):
        prev = Q[:, j - 1]
        advance = np.concatenate(([-np.inf], prev[:-1]))
        Q[:, j] = log_lik[:, j] + np.maximum(prev, advance)
        Q[j + 1 :, j] = -np.inf
    durations = np.zeros(L, dtype=np.int64)
    i = L - 1
    for j in range(T - 1, -1, -1):
        durations[i] += 1
        if j > 0 and i > 0 and (i == j or Q[i - 1, j - 1] > Q[i, j - 1]):
            i -= 1
    return durations


def gaussian_log_lik(mu: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unit-variance Gaussian log-likelihood of frames y (T, C) under token means mu (L, C)."""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    C = mu.shape[1]
    sq = (mu**2).sum(1)[:, None] - 2 * mu @ y.T + (y**2).sum(1)[None, :]
    return -0.5 * sq - 0.5 * C * np.log(2 * np.pi)


def path_score(log_lik: np.ndarray, durations) -> float:
    idx = np.repeat(np.arange(len(durations)), durations)
    return float(log_lik[idx, np.arange(len(idx))].sum())


def brute_force_align(log_lik: np.ndarray) -> tuple[np.ndarray, float]:
    """Exhaustive search over all compositions of T into L positive parts (oracle)."""
    L, T = log_lik.shape
    best, best_score = None, -np.inf
    for cuts in itertools.combinations(range(1, T), L - 1):
        bounds = (0, *cuts, T)
        d = np.diff(bounds)
        s = path_score(log_lik, d)
        if s > best_score:
            best, best_score = d, s
    return np.asarray(best), best_score
