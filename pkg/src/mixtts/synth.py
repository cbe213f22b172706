"""Text to waveform: tokenize, sample mels, invert with Griffin-Lim."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dsp import MelConfig, MelSpectrogram, Waveform, griffin_lim_invert, write_mel_cache, write_wav
from .model.network import AcousticModel, Batch
from .text import CharVocab, Registry, tokenize


@dataclass(frozen=True)
class SynthRequest:
    text: str
    speaker: str
    language: str


@dataclass
class SynthResult:
    mel: MelSpectrogram
    durations: np.ndarray
    waveform: Waveform | None


def parse_requests(lines, default_speaker: str | None = None, default_language: str | None = None):
    """One request per line: ``speaker<TAB>language<TAB>text`` or bare text.

    Bare lines need both defaults.  Blank lines are kept as errors rather
    than skipped so that output indices match input line numbers.
    """
    out = []
    for n, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        parts = line.split("\t")
        if len(parts) == 3:
            out.append(SynthRequest(parts[2], parts[0], parts[1]))
        elif len(parts) == 1 and line.strip():
            if default_speaker is None or default_language is None:
                raise ValueError(f"line {n}: bare text needs --speaker and --language defaults")
            out.append(SynthRequest(line, default_speaker, default_language))
        else:
            raise ValueError(f"line {n}: expected 'speaker<TAB>language<TAB>text' or bare text")
    return out


def request_batch(req: SynthRequest, vocab: CharVocab, registry: Registry) -> Batch:
    if req.speaker not in registry.speakers:
        raise KeyError(f"unknown speaker {req.speaker!r}")
    if req.language not in registry.languages:
        raise KeyError(f"unknown language {req.language!r}")
    tok = tokenize(req.text, registry.languages[req.language], registry.speakers[req.speaker], vocab)
    ids = torch.tensor([tok.ids], dtype=torch.long)
    return Batch(
        tokens=ids,
        token_mask=torch.ones_like(ids, dtype=torch.bool),
        speakers=torch.tensor([tok.speaker_id]),
        languages=torch.tensor([tok.language_id]),
        mels=None,
        mel_mask=None,
        keys=("request",),
    )


def synthesize(
    model: AcousticModel,
    req: SynthRequest,
    vocab: CharVocab,
    registry: Registry,
    seed: int = 0,
    n_steps: int = 10,
    vocode: bool = True,
    gl_iterations: int = 32,
    mel_cfg: MelConfig = MelConfig(),
) -> SynthResult:
    batch = request_batch(req, vocab, registry)
    gen = torch.Generator().manual_seed(seed)
    mels, durations, _ = model.synthesize(batch, n_steps=n_steps, generator=gen)
    mel = MelSpectrogram(mels[0].double().numpy(), mel_cfg)
    wav = griffin_lim_invert(mel, iterations=gl_iterations, seed=seed) if vocode else None
    return SynthResult(mel, durations[0].numpy(), wav)


def write_result(result: SynthResult, out_dir: str | Path, stem: str) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"mel": out / f"{stem}.mel"}
    write_mel_cache(paths["mel"], result.mel.values.astype(np.float32))
    if result.waveform is not None:
        paths["wav"] = out / f"{stem}.wav"
        write_wav(paths["wav"], result.waveform)
    return paths
