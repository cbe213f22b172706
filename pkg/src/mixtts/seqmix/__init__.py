from .functional import (
    AttentionParams,
    HydraParams,
    MixerKind,
    SsdParams,
    attention_forward,
    backward_check,
    cross_mix,
    dump_matrix,
    fnet_forward,
    hydra_forward,
    materialize_mixing_matrix,
    naive_dft2_real,
    naive_recurrence,
    ssd_forward,
)
from .layers import FNetMixer, HydraMixer, Mamba2Mixer, MixerLayer, SelfAttention, build_mixer

__all__ = [
    "AttentionParams",
    "FNetMixer",
    "HydraMixer",
    "HydraParams",
    "Mamba2Mixer",
    "MixerKind",
    "MixerLayer",
    "SelfAttention",
    "SsdParams",
    "attention_forward",
    "backward_check",
    "build_mixer",
    "cross_mix",
    "dump_matrix",
    "fnet_forward",
    "hydra_forward",
    "materialize_mixing_matrix",
    "naive_dft2_real",
    "naive_recurrence",
    "ssd_forward",
]
