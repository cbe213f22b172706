"""Multilingual flow-matching acoustic model with a pluggable mixer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..seqmix import MixerKind, build_mixer
from .align import monotonic_align
from .config import Dims, ModelConfig
from .flow import cfm_loss, euler_sample, masked_mean

LOG_2PI = math.log(2 * math.pi)


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, L) long
    token_mask: torch.Tensor  # (B, L) bool
    speakers: torch.Tensor  # (B,) long
    languages: torch.Tensor  # (B,) long
    mels: torch.Tensor | None = None  # (B, T, n_mels) log-mel, unnormalized
    mel_mask: torch.Tensor | None = None  # (B, T) bool
    keys: tuple[str, ...] = ()


@dataclass
class Conditioning:
    encoder_out: torch.Tensor  # (B, L, enc_hidden)
    speaker_vec: torch.Tensor  # (B, speaker_emb)
    language_vec: torch.Tensor  # (B, language_emb)
    mu_tokens: torch.Tensor  # (B, L, n_mels), normalized mel space
    cond_tokens: torch.Tensor  # (B, L, dec_in)
    log_durations: torch.Tensor  # (B, L)
    token_mask: torch.Tensor


def lengths_to_mask(lengths, max_len: int | None = None) -> torch.Tensor:
    lengths = torch.as_tensor(lengths)
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len)[None, :] < lengths[:, None]


def alignment_matrix(durations: torch.Tensor, max_frames: int | None = None) -> torch.Tensor:
    """(B, L) integer durations -> (B, L, T) one-hot token-per-frame matrix."""
    ends = torch.cumsum(durations, dim=1)
    starts = ends - durations
    T = int(ends[:, -1].max()) if max_frames is None else max_frames
    frames = torch.arange(T)[None, None, :]
    return (frames >= starts[..., None]) & (frames < ends[..., None])


def expand_by_durations(feats: torch.Tensor, durations: torch.Tensor):
    """Repeat token rows by their durations; returns ((B, T, C), frame mask)."""
    attn = alignment_matrix(durations).to(feats.dtype)
    out = attn.transpose(1, 2) @ feats
    return out, lengths_to_mask(durations.sum(1), out.shape[1])


def durations_from_log(log_durations: torch.Tensor, mask: torch.Tensor, length_scale: float = 1.0) -> torch.Tensor:
    """ceil(exp(pred)) clamped to >= 1 on valid tokens, 0 on padding.

    A 1e-5 slack keeps exact integers predicted in low precision from
    rounding up to the next frame.
    """
    w = torch.exp(log_durations.double()) * length_scale
    d = torch.clamp(torch.ceil(w - 1e-5), min=1).long()
    return d * mask.long()


class ConvNorm(nn.Module):
    """Conv1d over (B, L, C) input, then LayerNorm and ReLU."""

    def __init__(self, c_in, c_out, kernel, dropout=0.0):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, padding=kernel // 2)
        self.norm = nn.LayerNorm(c_out)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = self.conv((x * mask[..., None]).transpose(1, 2)).transpose(1, 2)
        return self.drop(torch.relu(self.norm(x)))


class ConvFFN(nn.Module):
    def __init__(self, width, filt, kernel, dropout=0.0):
        super().__init__()
        self.conv1 = nn.Conv1d(width, filt, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(filt, width, kernel, padding=kernel // 2)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        m = mask[:, None, :].to(x.dtype)
        h = torch.relu(self.conv1(x.transpose(1, 2) * m))
        h = self.conv2(self.drop(h) * m)
        return (h * m).transpose(1, 2)


class EncoderBlock(nn.Module):
    def __init__(self, kind: MixerKind, width, filt, kernel, dropout, n_heads, state_dim):
        super().__init__()
        self.mix = build_mixer(kind, width, n_heads, state_dim)
        self.norm1 = nn.LayerNorm(width)
        self.ffn = ConvFFN(width, filt, kernel, dropout)
        self.norm2 = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = self.norm1(x + self.drop(self.mix(x, mask)))
        x = self.norm2(x + self.drop(self.ffn(x, mask)))
        return x * mask[..., None]


class TextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, d: Dims):
        super().__init__()
        H = d.enc_hidden
        self.embed = nn.Embedding(cfg.n_vocab, H)
        nn.init.normal_(self.embed.weight, 0.0, H**-0.5)
        self.prenet = nn.ModuleList(
            ConvNorm(H, H, cfg.prenet_kernel, cfg.enc_dropout) for _ in range(cfg.prenet_layers)
        )
        self.prenet_out = nn.Linear(H, H)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.mixer, H, d.enc_filter, cfg.enc_kernel, cfg.enc_dropout, cfg.n_heads, cfg.ssm_state)
            for _ in range(d.enc_blocks)
        )

    def forward(self, tokens, mask):
        x = self.embed(tokens) * math.sqrt(self.embed.embedding_dim)
        h = x
        for layer in self.prenet:
            h = layer(h, mask)
        x = (x + self.prenet_out(h)) * mask[..., None]
        for block in self.blocks:
            x = block(x, mask)
        return x


class DurationPredictor(nn.Module):
    def __init__(self, width, filt, dropout):
        super().__init__()
        self.layers = nn.ModuleList([ConvNorm(width, filt, 3, dropout), ConvNorm(filt, filt, 3, dropout)])
        self.proj = nn.Linear(filt, 1)

    def forward(self, x, mask):
        for layer in self.layers:
            x = layer(x, mask)
        return self.proj(x).squeeze(-1) * mask


def timestep_embedding(t: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
    args = scale * t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return F.pad(emb, (0, dim - 2 * half))


class DecoderBlock(nn.Module):
    def __init__(self, kind, width, cond_width, time_width, ffn_mult, n_heads, state_dim):
        super().__init__()
        self.time = nn.Linear(time_width, width)
        self.ctx = nn.Linear(cond_width, width)
        self.self_mix = build_mixer(kind, width, n_heads, state_dim)
        self.cross_mix = build_mixer(kind, width, n_heads, state_dim)
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.ffn = ConvFFN(width, ffn_mult * width, 3)
        self.norm3 = nn.LayerNorm(width)

    def forward(self, h, temb, cond, mask):
        h = h + self.time(temb)[:, None, :]
        h = self.norm1(h + self.self_mix(h, mask))
        ctx = self.ctx(cond) * mask[..., None]
        h = self.norm2(h + self.cross_mix.cross(h, ctx, mask, mask))
        h = self.norm3(h + self.ffn(h, mask))
        return h * mask[..., None]


class FlowDecoder(nn.Module):
    """Vector-field estimator v(x_t, t | cond) over the frame sequence."""

    def __init__(self, cfg: ModelConfig, d: Dims):
        super().__init__()
        H = d.dec_hidden
        self.time_dim = d.time_emb
        self.time_mlp = nn.Sequential(nn.Linear(d.time_emb, 4 * H), nn.SiLU(), nn.Linear(4 * H, 4 * H))
        self.inp = nn.Linear(d.dec_out + d.dec_in, H)
        self.blocks = nn.ModuleList(
            DecoderBlock(cfg.mixer, H, d.dec_in, 4 * H, cfg.dec_ffn_mult, cfg.n_heads, cfg.ssm_state)
            for _ in range(d.dec_blocks)
        )
        self.out = nn.Linear(H, d.dec_out)

    def forward(self, x, t, mask, cond):
        temb = F.silu(self.time_mlp(timestep_embedding(t, self.time_dim)))
        h = self.inp(torch.cat([x, cond], dim=-1)) * mask[..., None]
        for block in self.blocks:
            h = block(h, temb, cond, mask)
        return self.out(h) * mask[..., None]


class AcousticModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = self.dims = cfg.dims()
        self.speaker_emb = nn.Embedding(cfg.n_speakers, d.speaker_emb)
        self.language_emb = nn.Embedding(cfg.n_languages, d.language_emb)
        self.encoder = TextEncoder(cfg, d)
        self.duration_predictor = DurationPredictor(d.enc_hidden, d.dp_filter, cfg.enc_dropout)
        joint = d.enc_hidden + d.speaker_emb + d.language_emb
        self.mu_proj = nn.Linear(joint, d.dec_out)
        self.cond_proj = nn.Linear(joint, d.dec_in)
        self.decoder = FlowDecoder(cfg, d)
        self.register_buffer("mel_mean", torch.zeros(d.dec_out))
        self.register_buffer("mel_std", torch.ones(d.dec_out))

    # -- pieces ---------------------------------------------------------------

    def set_mel_stats(self, mean, std) -> None:
        self.mel_mean.copy_(torch.as_tensor(mean, dtype=self.mel_mean.dtype))
        self.mel_std.copy_(torch.clamp(torch.as_tensor(std, dtype=self.mel_std.dtype), min=1e-3))

    def normalize(self, mels):
        return (mels - self.mel_mean) / self.mel_std

    def denormalize(self, x):
        return x * self.mel_std + self.mel_mean

    def encode(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.shape[-1] == 0:
            raise ValueError("cannot encode an empty token sequence")
        if mask is None:
            mask = torch.ones_like(tokens, dtype=torch.bool)
        return self.encoder(tokens, mask)

    def condition(self, batch: Batch) -> Conditioning:
        enc = self.encode(batch.tokens, batch.token_mask)
        spk = self.speaker_emb(batch.speakers)
        lang = self.language_emb(batch.languages)
        L = enc.shape[1]
        joint = torch.cat([enc, spk[:, None].expand(-1, L, -1), lang[:, None].expand(-1, L, -1)], dim=-1)
        m = batch.token_mask[..., None]
        return Conditioning(
            encoder_out=enc,
            speaker_vec=spk,
            language_vec=lang,
            mu_tokens=self.mu_proj(joint) * m,
            cond_tokens=self.cond_proj(joint) * m,
            log_durations=self.predict_durations(enc, batch.token_mask),
            token_mask=batch.token_mask,
        )

    def predict_durations(self, encoder_out, mask) -> torch.Tensor:
        return self.duration_predictor(encoder_out.detach(), mask)

    def regulate_length(self, encoder_out, durations, speaker_vec, language_vec):
        """Frame-rate decoder conditioning (B, T, dec_in) and its mask."""
        L = encoder_out.shape[1]
        joint = torch.cat(
            [encoder_out, speaker_vec[:, None].expand(-1, L, -1), language_vec[:, None].expand(-1, L, -1)], dim=-1
        )
        return expand_by_durations(self.cond_proj(joint), durations)

    def field(self, x, t, mask, cond):
        return self.decoder(x, t, mask, cond)

    # -- training objective --------------------------------------------------

    @torch.no_grad()
    def align(self, mu_tokens, y, token_mask, mel_mask) -> torch.Tensor:
        """MAS durations (B, L) of normalized frames y under token means."""
        C = y.shape[-1]
        sq = (
            (mu_tokens**2).sum(-1)[:, :, None]
            - 2 * mu_tokens @ y.transpose(1, 2)
            + (y**2).sum(-1)[:, None, :]
        )
        log_lik = (-0.5 * sq - 0.5 * C * LOG_2PI).double().cpu().numpy()
        n_tok = token_mask.sum(1).tolist()
        n_frm = mel_mask.sum(1).tolist()
        out = np.zeros(token_mask.shape, dtype=np.int64)
        for i, (L, T) in enumerate(zip(n_tok, n_frm)):
            out[i, :L] = monotonic_align(log_lik[i, :L, :T])
        return torch.from_numpy(out)

    def loss(self, batch: Batch, generator: torch.Generator | None = None, durations: torch.Tensor | None = None):
        """Total = flow matching + log-duration MSE + Gaussian prior NLL."""
        c = self.condition(batch)
        y = self.normalize(batch.mels) * batch.mel_mask[..., None]
        if durations is None:
            durations = self.align(c.mu_tokens, y, batch.token_mask, batch.mel_mask)
        T = y.shape[1]
        attn = alignment_matrix(durations, T).to(y.dtype)
        if not torch.equal(attn.sum(1).bool(), batch.mel_mask):
            raise ValueError("aligned durations do not cover the target frames")
        mu_y = attn.transpose(1, 2) @ c.mu_tokens
        cond = attn.transpose(1, 2) @ c.cond_tokens

        tok = batch.token_mask.to(y.dtype)
        log_target = torch.log(durations.to(y.dtype).clamp(min=1e-8)) * tok
        dur = ((c.log_durations - log_target) ** 2 * tok).sum() / tok.sum()
        prior = masked_mean(0.5 * ((y - mu_y) ** 2 + LOG_2PI), batch.mel_mask)
        flow = cfm_loss(
            y,
            batch.mel_mask,
            lambda x, t, m: self.field(x, t, m, cond),
            self.cfg.sigma_min,
            generator,
        )
        total = flow + dur + prior
        return {"total": total, "cfm": flow, "duration": dur, "prior": prior}

    # -- inference -----------------------------------------------------------

    @torch.no_grad()
    def synthesize(
        self,
        batch: Batch,
        n_steps: int = 10,
        generator: torch.Generator | None = None,
        temperature: float = 1.0,
        length_scale: float = 1.0,
    ):
        """Returns (mels (B, n_mels, T) unnormalized, durations (B, L), frame mask)."""
        c = self.condition(batch)
        durations = durations_from_log(c.log_durations, batch.token_mask, length_scale)
        cond, mask = self.regulate_length(c.encoder_out, durations, c.speaker_vec, c.language_vec)
        dtype = cond.dtype
        x0 = torch.randn(cond.shape[:2] + (self.dims.dec_out,), generator=generator, dtype=dtype) * temperature
        x0 = x0 * mask[..., None]
        x1 = euler_sample(lambda x, t, m: self.field(x, t, m, cond), x0, mask, n_steps)
        mels = self.denormalize(x1) * mask[..., None]
        return mels.transpose(1, 2), durations, mask


def count_parameters(cfg_or_model: ModelConfig | nn.Module) -> int:
    model = AcousticModel(cfg_or_model) if isinstance(cfg_or_model, ModelConfig) else cfg_or_model
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
