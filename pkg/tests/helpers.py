"""Random instance generators shared by the mixer tests."""

import numpy as np
import torch

from mixtts.seqmix import AttentionParams, HydraParams, SsdParams


def ssd_params(L, n_state, d_in, d_out, gen, alpha=None):
    if alpha is None:
        alpha = torch.rand(L, generator=gen, dtype=torch.float64) * 0.9 + 0.05
    return SsdParams(
        alpha=alpha,
        B_bar=torch.randn(L, n_state, d_in, generator=gen, dtype=torch.float64),
        C=torch.randn(L, d_out, n_state, generator=gen, dtype=torch.float64),
    )


def hydra_params(L, n_state, dim, gen):
    return HydraParams(
        ssd_params(L, n_state, dim, dim, gen),
        ssd_params(L, n_state, dim, dim, gen),
        torch.randn(dim, generator=gen, dtype=torch.float64),
    )


def attention_params(dim, gen, n_heads=2):
    w = lambda: torch.randn(dim, dim, generator=gen, dtype=torch.float64) / np.sqrt(dim)
    b = lambda: torch.randn(dim, generator=gen, dtype=torch.float64) * 0.1
    return AttentionParams(w(), w(), w(), w(), n_heads, b(), b(), b(), b())


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# criterion number -> (title, passed); filled by test_acceptance, printed by conftest
ACCEPTANCE: dict[int, tuple[str, bool]] = {}
