import json

import numpy as np
import pytest
import torch

from mixtts.corpus import SPEAKERS, char_frames, make_synthetic_corpus, synthesize_text
from mixtts.data import Utterance, collate
from mixtts.text import load_manifest, load_registry


def test_synthetic_corpus_is_deterministic(tmp_path, corpus_dir):
    make_synthetic_corpus(tmp_path, seed=0)
    assert (tmp_path / "manifest.tsv").read_text() == (corpus_dir / "manifest.tsv").read_text()
    a = (tmp_path / "wavs" / "JJ_000.wav").read_bytes()
    assert a == (corpus_dir / "wavs" / "JJ_000.wav").read_bytes()


def test_synthetic_corpus_size_and_speakers(corpus_dir):
    registry = load_registry(corpus_dir / "registry.yaml")
    records = load_manifest(corpus_dir / "manifest.tsv", registry)
    assert len(records) == 64
    assert {r.speaker_id for r in records} == {registry.speakers[s.name] for s in SPEAKERS}


def test_text_determines_duration():
    spk = SPEAKERS[0]
    wav = synthesize_text("ba ni", spk)
    frames = sum(char_frames(c, spk.rate) for c in "ba ni") + 1
    assert len(wav.samples) == frames * 256
    assert np.array_equal(wav.samples, synthesize_text("ba ni", spk).samples)


def test_prepare_outputs(prepared_dir, prepared):
    for name in ("vocab.json", "registry.yaml", "train.tsv", "stats.json"):
        assert (prepared_dir / name).exists()
    stats = json.loads((prepared_dir / "stats.json").read_text())
    assert len(stats["mel_mean"]) == 80 and min(stats["mel_std"]) >= 0
    assert len(list((prepared_dir / "mels").glob("*.mel"))) == 64
    # oversampling only ever adds duplicates
    assert len(prepared.utterances) >= 64
    totals = {}
    for u in prepared.utterances:
        totals[u.speaker] = totals.get(u.speaker, 0) + u.mel.shape[1]
    top = max(totals.values())
    assert all(t >= 0.8 * top for t in totals.values())


def test_collate_pads_and_masks():
    a = Utterance("a", np.array([3, 4, 5]), 0, 1, np.ones((80, 4)))
    b = Utterance("b", np.array([6]), 2, 0, np.full((80, 2), 2.0))
    batch = collate([a, b], pad_id=0)
    assert batch.tokens.tolist() == [[3, 4, 5], [6, 0, 0]]
    assert batch.token_mask.tolist() == [[True] * 3, [True, False, False]]
    assert batch.mels.shape == (2, 4, 80)
    assert batch.mel_mask.sum(1).tolist() == [4, 2]
    assert torch.all(batch.mels[1, 2:] == 0)
    assert batch.speakers.tolist() == [0, 2] and batch.keys == ("a", "b")


def test_collate_rejects_empty():
    with pytest.raises(ValueError):
        collate([])
