"""Trainable mixer layers built on the functional operators.

Every layer takes ``x`` of shape (batch, L, width) and a boolean ``mask``
(batch, L) of valid positions, and exposes ``cross(x, ctx, ...)`` for
conditioning on a second sequence.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .functional import (
    DEFAULT_CHUNK,
    AttentionParams,
    MixerKind,
    attention_forward,
    fnet_forward,
    shift,
    ssd_chunked,
)


def _full_mask(x: torch.Tensor) -> torch.Tensor:
    return torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)


def _lengths(mask: torch.Tensor) -> list[int]:
    return mask.sum(dim=1).tolist()


def stack_sequences(a, a_mask, b, b_mask):
    """Per item, valid rows of ``a`` followed by valid rows of ``b``, right-padded."""
    la, lb = a_mask.sum(1), b_mask.sum(1)
    total = la + lb
    width = int(total.max())
    La, Lb = a.shape[1], b.shape[1]
    # gather from [a; b; zero row]
    pool = torch.cat([a, b, a.new_zeros(a.shape[0], 1, a.shape[2])], dim=1)
    j = torch.arange(width, device=a.device)[None, :]
    src = torch.where(j < la[:, None], j, La + j - la[:, None])
    mask = j < total[:, None]
    src = torch.where(mask, src, La + Lb)
    stacked = torch.gather(pool, 1, src[..., None].expand(-1, -1, a.shape[2]))
    return stacked, mask


class MixerLayer(nn.Module):
    kind: MixerKind

    def __init__(self, width: int):
        super().__init__()
        self.width = width

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        raise NotImplementedError

    def cross(self, x, ctx, x_mask=None, ctx_mask=None) -> torch.Tensor:
        """Stack ``[x; ctx]`` along time, mix, keep the ``x`` rows."""
        x_mask = _full_mask(x) if x_mask is None else x_mask
        ctx_mask = _full_mask(ctx) if ctx_mask is None else ctx_mask
        stacked, mask = stack_sequences(x, x_mask, ctx, ctx_mask)
        out = self.forward(stacked, mask)[:, : x.shape[1]]
        return out * x_mask[..., None]


class SelfAttention(MixerLayer):
    kind = MixerKind.ATTENTION

    def __init__(self, width: int, n_heads: int = 2, ctx_width: int | None = None):
        super().__init__(width)
        ctx_width = width if ctx_width is None else ctx_width
        self.n_heads = n_heads
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(ctx_width, width)
        self.v = nn.Linear(ctx_width, width)
        self.o = nn.Linear(width, width)

    def params(self) -> AttentionParams:
        return AttentionParams(
            self.q.weight, self.k.weight, self.v.weight, self.o.weight, self.n_heads,
            self.q.bias, self.k.bias, self.v.bias, self.o.bias,
        )

    def forward(self, x, mask=None):
        out = attention_forward(x, self.params(), key_mask=mask)
        return out if mask is None else out * mask[..., None]

    def cross(self, x, ctx, x_mask=None, ctx_mask=None):
        out = attention_forward(x, self.params(), context=ctx, key_mask=ctx_mask)
        return out if x_mask is None else out * x_mask[..., None]


class _SelectiveScanBase(MixerLayer):
    """Shared pieces: gated input projection, softplus step size, per-head decay."""

    def __init__(self, width: int, n_heads: int, state_dim: int, directions: int, chunk: int):
        super().__init__(width)
        if width % n_heads:
            raise ValueError(f"width {width} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.state_dim = state_dim
        self.chunk = chunk
        self.directions = directions
        n_out = 2 * width + directions * (2 * state_dim + n_heads)
        self.in_proj = nn.Linear(width, n_out, bias=False)
        self.out_proj = nn.Linear(width, width, bias=False)
        self.A_log = nn.Parameter(torch.log(torch.linspace(1.0, 8.0, directions * n_heads)))
        # dt initialised log-uniformly in [1e-3, 1e-1]
        dt = torch.exp(torch.linspace(math.log(1e-3), math.log(1e-1), directions * n_heads))
        self.dt_bias = nn.Parameter(dt + torch.log(-torch.expm1(-dt)))

    def _split(self, x):
        w, n, h = self.width, self.state_dim, self.n_heads
        sizes = [w, w] + [n, n, h] * self.directions
        return torch.split(self.in_proj(x), sizes, dim=-1)

    def _scan(self, xs, B, C, dt_raw, which: int):
        return self._scan_dirs([(xs, B, C, dt_raw, which)])[0]

    def _scan_dirs(self, dirs):
        """Runs one scan per ``(xs, B, C, dt_raw, direction)`` as a single batch."""
        b, L, _ = dirs[0][0].shape
        h = self.n_heads
        xs, B, C, dt_raw = (torch.cat([d[i] for d in dirs]) for i in range(4))
        bias = torch.cat([self.dt_bias[d[4] * h : (d[4] + 1) * h].expand(b, h) for d in dirs])
        rate = torch.cat([self.A_log[d[4] * h : (d[4] + 1) * h].exp().expand(b, h) for d in dirs])
        dt = F.softplus(dt_raw + bias[:, None])
        log_a = -rate[:, None] * dt
        n = len(dirs) * b
        X = xs.view(n, L, h, -1) * dt[..., None]
        Bh = B[:, :, None, :].expand(n, L, h, self.state_dim)
        Ch = C[:, :, None, :].expand(n, L, h, self.state_dim)
        return ssd_chunked(X, log_a, Bh, Ch, self.chunk).reshape(n, L, -1).split(b)


class Mamba2Mixer(_SelectiveScanBase):
    """Causal selective SSM with a SiLU gate."""

    kind = MixerKind.MAMBA2

    def __init__(self, width: int, n_heads: int = 2, state_dim: int = 16, chunk: int = DEFAULT_CHUNK):
        super().__init__(width, n_heads, state_dim, 1, chunk)
        self.D = nn.Parameter(torch.ones(n_heads))

    def forward(self, x, mask=None):
        if mask is not None:
            x = x * mask[..., None]
        z, xs, B, C, dt_raw = self._split(x)
        y = self._scan(xs, B, C, dt_raw, 0)
        b, L, _ = xs.shape
        y = y + (xs.view(b, L, self.n_heads, -1) * self.D[:, None]).reshape(b, L, -1)
        return self.out_proj(y * F.silu(z))


class HydraMixer(_SelectiveScanBase):
    """Bidirectional mixer: forward scan, backward scan on the reversed
    sequence, each shifted by one step, plus a per-channel diagonal.

    Right-padding is exact: after reversal the zeroed pad rows come first and
    leave the backward state at zero.
    """

    kind = MixerKind.HYDRA

    def __init__(self, width: int, n_heads: int = 2, state_dim: int = 16, chunk: int = DEFAULT_CHUNK):
        super().__init__(width, n_heads, state_dim, 2, chunk)
        self.D = nn.Parameter(torch.ones(width))

    def forward(self, x, mask=None):
        if mask is not None:
            x = x * mask[..., None]
        z, xs, Bf, Cf, dtf, Bb, Cb, dtb = self._split(x)
        fwd, bwd = self._scan_dirs(
            [(xs, Bf, Cf, dtf, 0), (xs.flip(1), Bb.flip(1), Cb.flip(1), dtb.flip(1), 1)]
        )
        y = shift(fwd, 1) + shift(bwd, 1).flip(1) + xs * self.D
        return self.out_proj(y * F.silu(z))


class FNetMixer(MixerLayer):
    """Parameter-free 2-D Fourier mixing; each item uses its own valid length."""

    kind = MixerKind.FNET

    def forward(self, x, mask=None):
        if mask is None:
            return fnet_forward(x)
        lengths = _lengths(mask)
        L = x.shape[1]
        if all(n == L for n in lengths):
            return fnet_forward(x)
        rows = [F.pad(fnet_forward(x[i, :n]), (0, 0, 0, L - n)) for i, n in enumerate(lengths)]
        return torch.stack(rows)


def build_mixer(kind: MixerKind | str, width: int, n_heads: int = 2, state_dim: int = 16) -> MixerLayer:
    kind = MixerKind.parse(kind)
    if kind is MixerKind.ATTENTION:
        return SelfAttention(width, n_heads)
    if kind is MixerKind.MAMBA2:
        return Mamba2Mixer(width, n_heads, state_dim)
    if kind is MixerKind.HYDRA:
        return HydraMixer(width, n_heads, state_dim)
    return FNetMixer(width)
