"""Corpus preparation: vocabulary, mel cache, oversampled training list."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dsp import MelConfig, melspectrogram, read_mel_cache, read_wav, resample, write_mel_cache
from .model.network import Batch
from .text import (
    CharVocab,
    Registry,
    build_vocab,
    group_by_speaker,
    load_manifest,
    load_registry,
    oversample,
    tokenize,
    write_manifest,
)


@dataclass
class Utterance:
    key: str
    tokens: np.ndarray
    speaker: int
    language: int
    mel: np.ndarray  # (n_mels, T)


def utterance_key(audio_path: str) -> str:
    return Path(audio_path).stem


def prepare_corpus(
    manifest: str | Path,
    registry_path: str | Path,
    out_dir: str | Path,
    mel_cfg: MelConfig = MelConfig(),
) -> dict:
    """Tokenize, extract mels, oversample; everything lands under out_dir.

    Outputs: ``vocab.json``, ``registry.yaml`` copy, ``mels/<key>.mel``,
    ``train.tsv`` (oversampled) and ``stats.json`` (per-channel mel mean/std).
    """
    out = Path(out_dir)
    (out / "mels").mkdir(parents=True, exist_ok=True)
    registry = load_registry(registry_path)
    records = load_manifest(manifest, registry)
    vocab = build_vocab(records, registry.apostrophe_languages)

    keys = set()
    total = np.zeros(mel_cfg.n_mels)
    total_sq = np.zeros(mel_cfg.n_mels)
    n_frames = 0
    for rec in records:
        key = utterance_key(rec.audio_path)
        if key in keys:
            continue
        keys.add(key)
        tokenize(rec.text, rec.language_id, rec.speaker_id, vocab)
        wav = read_wav(rec.audio_path)
        if wav.sample_rate != mel_cfg.sample_rate:
            wav = resample(wav, mel_cfg.sample_rate)
        mel = melspectrogram(wav, mel_cfg).values
        write_mel_cache(out / "mels" / f"{key}.mel", mel)
        mel = mel.astype(np.float32).astype(np.float64)
        total += mel.sum(1)
        total_sq += (mel**2).sum(1)
        n_frames += mel.shape[1]
    mean = total / n_frames
    std = np.sqrt(np.maximum(total_sq / n_frames - mean**2, 0.0))

    train = oversample(group_by_speaker(records))
    write_manifest(out / "train.tsv", train, registry)
    (out / "registry.yaml").write_text(
        Path(registry_path).read_text(encoding="utf-8"), encoding="utf-8"
    )
    (out / "vocab.json").write_text(json.dumps(vocab.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")
    stats = {"mel_mean": mean.tolist(), "mel_std": std.tolist(), "n_frames": n_frames}
    (out / "stats.json").write_text(json.dumps(stats), encoding="utf-8")
    return {
        "n_records": len(records),
        "n_train": len(train),
        "vocab_size": vocab.size,
        "n_frames": n_frames,
    }


@dataclass
class PreparedCorpus:
    vocab: CharVocab
    registry: Registry
    utterances: list[Utterance]
    mel_mean: np.ndarray
    mel_std: np.ndarray


def load_prepared(data_dir: str | Path) -> PreparedCorpus:
    root = Path(data_dir)
    vocab = CharVocab.from_dict(json.loads((root / "vocab.json").read_text(encoding="utf-8")))
    registry = load_registry(root / "registry.yaml")
    stats = json.loads((root / "stats.json").read_text(encoding="utf-8"))
    cache: dict[str, np.ndarray] = {}
    utts = []
    for rec in load_manifest(root / "train.tsv", registry):
        key = utterance_key(rec.audio_path)
        if key not in cache:
            cache[key] = read_mel_cache(root / "mels" / f"{key}.mel")
        tok = tokenize(rec.text, rec.language_id, rec.speaker_id, vocab)
        utts.append(Utterance(key, np.asarray(tok.ids), rec.speaker_id, rec.language_id, cache[key]))
    return PreparedCorpus(vocab, registry, utts, np.asarray(stats["mel_mean"]), np.asarray(stats["mel_std"]))


def collate(items: list[Utterance], pad_id: int = 0) -> Batch:
    """Right-pad tokens and mels; mels come out as (B, T, n_mels)."""
    L = max(len(u.tokens) for u in items)
    T = max(u.mel.shape[1] for u in items)
    n_mels = items[0].mel.shape[0]
    tokens = torch.full((len(items), L), pad_id, dtype=torch.long)
    mels = torch.zeros(len(items), T, n_mels)
    tok_len, mel_len = [], []
    for i, u in enumerate(items):
        tokens[i, : len(u.tokens)] = torch.as_tensor(u.tokens)
        mels[i, : u.mel.shape[1]] = torch.from_numpy(np.ascontiguousarray(u.mel.T))
        tok_len.append(len(u.tokens))
        mel_len.append(u.mel.shape[1])
    return Batch(
        tokens=tokens,
        token_mask=torch.arange(L)[None] < torch.tensor(tok_len)[:, None],
        speakers=torch.tensor([u.speaker for u in items]),
        languages=torch.tensor([u.language for u in items]),
        mels=mels,
        mel_mask=torch.arange(T)[None] < torch.tensor(mel_len)[:, None],
        keys=tuple(u.key for u in items),
    )
