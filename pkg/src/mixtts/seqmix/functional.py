"""Stateless sequence-mixing operators and their dense-matrix oracles.

Tensor layout is ``(..., L, channels)``.  The selective state-space scan is
evaluated in chunks: a quadratic masked form inside each chunk plus a
recurrence over chunk boundary states, so cost grows linearly in ``L``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_CHUNK = 32


class MixerKind(str, enum.Enum):
    ATTENTION = "attention"
    MAMBA2 = "mamba2"
    HYDRA = "hydra"
    FNET = "fnet"

    @classmethod
    def parse(cls, value: "str | MixerKind") -> "MixerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown mixer {value!r}; expected one of {names}") from None


@dataclass
class SsdParams:
    """Per-timestep weights of ``h_t = alpha_t h_{t-1} + B_t x_t``, ``y_t = C_t h_t``.

    alpha: (L,), B_bar: (L, state, in_dim), C: (L, out_dim, state).
    """

    alpha: torch.Tensor
    B_bar: torch.Tensor
    C: torch.Tensor

    def __post_init__(self):
        L = self.alpha.shape[0]
        if self.alpha.ndim != 1 or self.B_bar.ndim != 3 or self.C.ndim != 3:
            raise ValueError("alpha must be (L,), B_bar (L, N, in), C (L, out, N)")
        if self.B_bar.shape[0] != L or self.C.shape[0] != L:
            raise ValueError(
                f"time lengths disagree: alpha {L}, B_bar {self.B_bar.shape[0]}, C {self.C.shape[0]}"
            )
        if self.C.shape[2] != self.B_bar.shape[1]:
            raise ValueError(f"state sizes disagree: B_bar {self.B_bar.shape[1]}, C {self.C.shape[2]}")
        if not torch.all(torch.isfinite(self.alpha)) or torch.any(self.alpha < 0):
            raise ValueError("alpha must be finite and non-negative")

    @property
    def length(self) -> int:
        return self.alpha.shape[0]

    @property
    def state_dim(self) -> int:
        return self.B_bar.shape[1]

    def flip(self) -> "SsdParams":
        return SsdParams(self.alpha.flip(0), self.B_bar.flip(0), self.C.flip(0))


@dataclass
class HydraParams:
    """Two selective scans (backward one indexed in original time) plus a diagonal."""

    forward_ss: SsdParams
    backward_ss: SsdParams
    D: torch.Tensor

    def __post_init__(self):
        if self.forward_ss.length != self.backward_ss.length:
            raise ValueError("forward and backward scans must have equal length")
        if self.D.ndim != 1 or not torch.all(torch.isfinite(self.D)):
            raise ValueError("D must be a finite vector of per-channel scalars")


@dataclass
class AttentionParams:
    """Projection weights in ``nn.Linear`` layout (out_features, in_features)."""

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_o: torch.Tensor
    n_heads: int = 2
    b_q: torch.Tensor | None = None
    b_k: torch.Tensor | None = None
    b_v: torch.Tensor | None = None
    b_o: torch.Tensor | None = None

    def __post_init__(self):
        inner = self.w_q.shape[0]
        if self.w_k.shape[0] != inner or self.w_v.shape[0] != inner or self.w_o.shape[1] != inner:
            raise ValueError("attention projections do not compose")
        if inner % self.n_heads:
            raise ValueError(f"inner width {inner} not divisible by {self.n_heads} heads")

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[0] // self.n_heads


# -- selective scan ----------------------------------------------------------


def segsum(x: torch.Tensor) -> torch.Tensor:
    """out[..., i, j] = sum(x[..., j+1 : i+1]) for i >= j, -inf above the diagonal.

    Built from a masked cumulative sum so ``-inf`` entries (zero decay) never
    meet each other in a subtraction.
    """
    T = x.shape[-1]
    x = x[..., None].expand(*x.shape, T)
    strict = torch.tril(torch.ones(T, T, dtype=torch.bool, device=x.device), diagonal=-1)
    x = x.masked_fill(~strict, 0.0)
    out = torch.cumsum(x, dim=-2)
    lower = torch.tril(torch.ones(T, T, dtype=torch.bool, device=x.device))
    return out.masked_fill(~lower, -math.inf)


def _chunk_segsum(A: torch.Tensor, A_cum: torch.Tensor) -> torch.Tensor:
    # differences of the running sum are cheaper than segsum but need finite decays
    if not torch.all(torch.isfinite(A)):
        return segsum(A)
    Q = A.shape[-1]
    lower = torch.tril(torch.ones(Q, Q, dtype=torch.bool, device=A.device))
    return (A_cum[..., :, None] - A_cum[..., None, :]).masked_fill(~lower, -math.inf)


def ssd_chunked(
    X: torch.Tensor,
    log_a: torch.Tensor,
    B: torch.Tensor,
    C: torch.Tensor,
    chunk: int = DEFAULT_CHUNK,
) -> torch.Tensor:
    """Multi-head scalar-decay scan.

    Shapes: X (b, L, h, p), log_a (b, L, h), B and C (b, L, h, n).
    Returns Y (b, L, h, p) with
    ``Y[t] = sum_{s<=t} (C_t . B_s) exp(sum_{r=s+1..t} log_a_r) X[s]``.
    """
    b, L, h, p = X.shape
    n = B.shape[-1]
    # one chunk is cheapest when the sequence is short
    Q = L if L <= 2 * chunk else chunk
    pad = (-L) % Q
    if pad:
        X = F.pad(X, (0, 0, 0, 0, 0, pad))
        log_a = F.pad(log_a, (0, 0, 0, pad))
        B = F.pad(B, (0, 0, 0, 0, 0, pad))
        C = F.pad(C, (0, 0, 0, 0, 0, pad))
    c = (L + pad) // Q
    X = X.reshape(b, c, Q, h, p)
    B = B.reshape(b, c, Q, h, n)
    C = C.reshape(b, c, Q, h, n)
    A = log_a.reshape(b, c, Q, h).permute(0, 3, 1, 2)  # (b, h, c, Q)
    A_cum = torch.cumsum(A, dim=-1)

    decay = torch.exp(_chunk_segsum(A, A_cum))  # (b, h, c, Q, Q)
    scores = torch.einsum("bclhn,bcshn->bhcls", C, B) * decay
    Y = torch.einsum("bhcls,bcshp->bclhp", scores, X)
    if c == 1:
        return Y.reshape(b, Q, h, p)[:, :L]

    # contribution of each chunk's inputs to its final state
    to_end = decay[..., -1, :]  # (b, h, c, Q)
    states = torch.einsum("bclhn,bhcl,bclhp->bchpn", B, to_end, X)
    states = torch.cat([torch.zeros_like(states[:, :1]), states], dim=1)
    chunk_decay = torch.exp(segsum(F.pad(A_cum[..., -1], (1, 0))))  # (b, h, c+1, c+1)
    states = torch.einsum("bhzc,bchpn->bzhpn", chunk_decay, states)[:, :-1]
    Y = Y + torch.einsum("bclhn,bchpn,bhcl->bclhp", C, states, torch.exp(A_cum))
    return Y.reshape(b, c * Q, h, p)[:, :L]


def _check_x(x: torch.Tensor, width: int, what: str) -> None:
    if x.ndim != 2:
        raise ValueError(f"{what}: expected (L, channels) input, got shape {tuple(x.shape)}")
    if x.shape[1] != width:
        raise ValueError(f"{what}: input has {x.shape[1]} channels, parameters expect {width}")


def ssd_forward(x: torch.Tensor, p: SsdParams, chunk: int = DEFAULT_CHUNK) -> torch.Tensor:
    """Selective SSM with zero initial state; x (L, in_dim) -> (L, out_dim)."""
    _check_x(x, p.B_bar.shape[2], "ssd_forward")
    if x.shape[0] != p.length:
        raise ValueError(f"ssd_forward: input length {x.shape[0]} != parameter length {p.length}")
    u = torch.einsum("lni,li->ln", p.B_bar, x)
    ones = torch.ones(1, p.length, 1, 1, dtype=x.dtype, device=x.device)
    h = ssd_chunked(u[None, :, None, :], torch.log(p.alpha)[None, :, None], ones, ones, chunk)
    return torch.einsum("lon,ln->lo", p.C, h[0, :, 0, :])


def shift(x: torch.Tensor, dim: int = -2) -> torch.Tensor:
    """Move every row one step later along ``dim``; a zero row enters first."""
    n = x.shape[dim]
    head = torch.zeros_like(x.narrow(dim, 0, 1))
    return torch.cat([head, x.narrow(dim, 0, n - 1)], dim=dim)


def hydra_forward(x: torch.Tensor, p: HydraParams, chunk: int = DEFAULT_CHUNK) -> torch.Tensor:
    """Bidirectional quasiseparable mixing, x (L, dim) -> (L, dim).

    ``shift(SS_fwd(x)) + flip(shift(SS_bwd(flip(x)))) + D * x``; the backward
    parameters are given in original time order and flipped together with x.
    """
    _check_x(x, p.D.shape[0], "hydra_forward")
    fwd = ssd_forward(x, p.forward_ss, chunk)
    bwd = ssd_forward(x.flip(0), p.backward_ss.flip(), chunk)
    if fwd.shape[1] != x.shape[1] or bwd.shape[1] != x.shape[1]:
        raise ValueError("hydra_forward: scans must map dim -> dim")
    return shift(fwd, 0) + shift(bwd, 0).flip(0) + p.D * x


def fnet_forward(x: torch.Tensor) -> torch.Tensor:
    """Real part of the unnormalized DFT over hidden, then sequence axes."""
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError(f"fnet_forward: expected (..., L, H) input, got {tuple(x.shape)}")
    if not torch.all(torch.isfinite(x)):
        raise ValueError("fnet_forward: input contains non-finite values")
    # For real x the 2-D spectrum is conjugate symmetric, Re Y[k, j] = Re Y[-k, -j],
    # so the upper hidden frequencies are read off the half spectrum.
    half = torch.fft.rfft2(x).real
    n_upper = x.shape[-1] - half.shape[-1]
    if n_upper == 0:
        return half
    upper = half[..., 1 : 1 + n_upper].flip(-2).roll(1, dims=-2).flip(-1)
    return torch.cat([half, upper], dim=-1)


def _linear(x, w, b):
    return F.linear(x, w, b)


def attention_forward(
    x: torch.Tensor,
    p: AttentionParams,
    causal: bool = False,
    context: torch.Tensor | None = None,
    key_mask: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Multi-head softmax attention; queries from x, keys/values from context (default x).

    ``key_mask`` (..., L_k) marks valid key positions.
    """
    ctx = x if context is None else context
    if x.shape[-1] != p.w_q.shape[1] or ctx.shape[-1] != p.w_k.shape[1]:
        raise ValueError("attention_forward: input width does not match projections")
    hd = p.head_dim
    q = _linear(x, p.w_q, p.b_q).unflatten(-1, (p.n_heads, hd)).transpose(-2, -3)
    k = _linear(ctx, p.w_k, p.b_k).unflatten(-1, (p.n_heads, hd)).transpose(-2, -3)
    v = _linear(ctx, p.w_v, p.b_v).unflatten(-1, (p.n_heads, hd)).transpose(-2, -3)
    scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
    if causal:
        Lq, Lk = scores.shape[-2:]
        allowed = torch.ones(Lq, Lk, dtype=torch.bool, device=x.device).tril(Lk - Lq)
        scores = scores.masked_fill(~allowed, -math.inf)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[..., None, None, :], -math.inf)
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ v).transpose(-2, -3).flatten(-2)
    out = _linear(out, p.w_o, p.b_o)
    return (out, weights) if return_weights else out


def cross_mix(a: torch.Tensor, b: torch.Tensor, layer: MixerKind | str, params=None) -> torch.Tensor:
    """Mix sequence ``a`` with context ``b``; returns ``len(a)`` rows.

    Attention uses queries from ``a`` and keys/values from ``b``.  The
    attention-free mixers run on ``[a; b]`` stacked along time, with
    parameters (if any) covering the stacked length, and keep the first rows.
    """
    layer = MixerKind.parse(layer)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"cross_mix: width mismatch {a.shape[-1]} vs {b.shape[-1]}")
    if layer is MixerKind.ATTENTION:
        return attention_forward(a, params, context=b)
    stacked = torch.cat([a, b], dim=-2)
    if layer is MixerKind.FNET:
        out = fnet_forward(stacked)
    elif layer is MixerKind.MAMBA2:
        out = ssd_forward(stacked, params)
    else:
        out = hydra_forward(stacked, params)
    return out[..., : a.shape[-2], :]


# -- dense oracles -----------------------------------------------------------


def _ssd_dense(p: SsdParams, L: int) -> np.ndarray:
    alpha = p.alpha.detach().double().cpu().numpy()
    Bb = p.B_bar.detach().double().cpu().numpy()
    C = p.C.detach().double().cpu().numpy()
    out_dim, in_dim = C.shape[1], Bb.shape[2]
    M = np.zeros((L, L, out_dim, in_dim))
    for t in range(L):
        for s in range(t + 1):
            decay = 1.0
            for r in range(s + 1, t + 1):
                decay *= alpha[r]
            M[t, s] = decay * (C[t] @ Bb[s])
    return M


def materialize_mixing_matrix(p: SsdParams | HydraParams, L: int | None = None) -> np.ndarray:
    """Dense mixing matrix built entry by entry (test oracle, O(L^3)).

    Returns (L, L) for single-channel parameters, otherwise
    (L, L, out_dim, in_dim) with ``y_t = sum_s M[t, s] @ x_s``.
    """
    if isinstance(p, SsdParams):
        L = p.length if L is None else L
        M = _ssd_dense(p, L)
    else:
        L = p.forward_ss.length if L is None else L
        fwd = _ssd_dense(p.forward_ss, L)
        flipped = p.backward_ss.flip()
        bwd = _ssd_dense(flipped, L)
        D = p.D.detach().double().cpu().numpy()
        M = np.zeros_like(fwd)
        for t in range(L):
            M[t, t] = np.diag(D)
            for s in range(t):
                M[t, s] = fwd[t - 1, s]
            for s in range(t + 1, L):
                # backward scan sees position s at flipped index L-1-s
                M[t, s] = bwd[L - 1 - t - 1, L - 1 - s]
    if M.shape[2] == 1 and M.shape[3] == 1:
        return M[:, :, 0, 0]
    return M


def naive_recurrence(x: np.ndarray, p: SsdParams) -> np.ndarray:
    """Step-by-step evaluation of the SSM recurrence (test oracle)."""
    alpha = p.alpha.detach().double().numpy()
    Bb = p.B_bar.detach().double().numpy()
    C = p.C.detach().double().numpy()
    h = np.zeros(Bb.shape[1])
    ys = []
    for t in range(len(alpha)):
        h = alpha[t] * h + Bb[t] @ x[t]
        ys.append(C[t] @ h)
    return np.array(ys)


def naive_dft2_real(x: np.ndarray) -> np.ndarray:
    """O(L^2 H^2) double-loop DFT over hidden then sequence axes, real part."""
    L, H = x.shape
    out = np.zeros((L, H))
    for k in range(L):
        for m in range(H):
            acc = 0j
            for n in range(L):
                for h in range(H):
                    acc += x[n, h] * np.exp(-2j * np.pi * (m * h / H + k * n / L))
            out[k, m] = acc.real
    return out


def dump_matrix(path, M: np.ndarray) -> None:
    """Write a 2-D oracle matrix for debugging, in the mel cache binary layout."""
    from ..dsp import write_mel_cache

    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"dump_matrix: expected a 2-D matrix, got shape {M.shape}")
    write_mel_cache(path, M)


# -- gradient verification ---------------------------------------------------


def backward_check(
    forward: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    step: float = 1e-6,
    seed: int = 0,
) -> float:
    """Compare autograd against central differences in float64.

    The scalar loss is ``sum(w * forward(*inputs))`` for a fixed random ``w``.
    Returns ``max|g_auto - g_fd| / max|g_fd|`` over every input entry.
    """
    inputs = [t.detach().double().clone() for t in inputs]
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probe = forward(*inputs)
    weight = torch.randn(probe.shape, generator=gen, dtype=torch.float64)

    def loss(*args):
        return (forward(*args) * weight).sum()

    leaves = [t.clone().requires_grad_(True) for t in inputs]
    grads = torch.autograd.grad(loss(*leaves), leaves, allow_unused=True)

    worst = 0.0
    scale = 0.0
    with torch.no_grad():
        for i, t in enumerate(inputs):
            auto = grads[i] if grads[i] is not None else torch.zeros_like(t)
            flat = t.view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + step
                up = loss(*inputs).item()
                flat[j] = orig - step
                down = loss(*inputs).item()
                flat[j] = orig
                fd = (up - down) / (2 * step)
                worst = max(worst, abs(auto.view(-1)[j].item() - fd))
                scale = max(scale, abs(fd))
    return worst / scale if scale > 0 else worst
