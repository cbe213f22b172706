from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..seqmix import MixerKind

SSM_KINDS = (MixerKind.MAMBA2, MixerKind.HYDRA)


@dataclass(frozen=True)
class Dims:
    """Effective layer widths after the shrink rule and desk scaling."""

    speaker_emb: int
    language_emb: int
    enc_hidden: int
    enc_filter: int
    enc_blocks: int
    dp_filter: int
    dec_in: int
    dec_out: int
    dec_hidden: int
    dec_blocks: int
    time_emb: int


@dataclass(frozen=True)
class ModelConfig:
    """Full-scale defaults follow the published training table.

    ``dec_hidden`` is the attention/FNet width; selective-scan mixers use
    three quarters of it.  ``desk_scale`` divides every channel width (not
    the 80 mel channels) by ``desk_divisor`` and trims the encoder to
    ``desk_enc_blocks`` blocks.
    """

    mixer: MixerKind = MixerKind.ATTENTION
    n_vocab: int = 64
    n_speakers: int = 4
    n_languages: int = 3
    speaker_emb_dim: int = 256
    language_emb_dim: int = 192
    enc_hidden: int = 640
    enc_filter: int = 768
    enc_dropout: float = 0.1
    enc_blocks: int = 6
    prenet_layers: int = 3
    prenet_kernel: int = 5
    enc_kernel: int = 3
    dp_filter: int = 256
    dec_in: int = 160
    dec_out: int = 80
    dec_hidden: int = 256
    dec_blocks: int = 2
    dec_ffn_mult: int = 4
    time_emb_dim: int = 128
    n_heads: int = 2
    ssm_state: int = 16
    sigma_min: float = 1e-4
    desk_scale: bool = False
    desk_divisor: int = 8
    desk_enc_blocks: int = 2

    def __post_init__(self):
        object.__setattr__(self, "mixer", MixerKind.parse(self.mixer))
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if not 0 <= self.enc_dropout < 1:
            raise ValueError("enc_dropout must lie in [0, 1)")
        d = self.dims()
        for name in ("enc_hidden", "dec_hidden"):
            if getattr(d, name) % self.n_heads:
                raise ValueError(f"{name}={getattr(d, name)} is not divisible by {self.n_heads} heads")

    def dims(self) -> Dims:
        div = self.desk_divisor if self.desk_scale else 1

        def w(x: int) -> int:
            return max(1, x // div)

        dec_hidden = self.dec_hidden
        if self.mixer in SSM_KINDS:
            dec_hidden = dec_hidden * 3 // 4
        return Dims(
            speaker_emb=w(self.speaker_emb_dim),
            language_emb=w(self.language_emb_dim),
            enc_hidden=w(self.enc_hidden),
            enc_filter=w(self.enc_filter),
            enc_blocks=self.desk_enc_blocks if self.desk_scale else self.enc_blocks,
            dp_filter=w(self.dp_filter),
            dec_in=w(self.dec_in),
            dec_out=self.dec_out,
            dec_hidden=w(dec_hidden),
            dec_blocks=self.dec_blocks,
            time_emb=w(self.time_emb_dim),
        )

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["mixer"] = self.mixer.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
