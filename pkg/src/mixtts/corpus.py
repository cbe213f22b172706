"""Deterministic synthetic multilingual corpus.

Each character maps to a fixed acoustic segment: vowels are harmonic tones
with two formant-shaped resonances, voiced consonants a low harmonic hum,
other consonants a band-limited noise burst, spaces silence.  Speakers
differ in pitch and speaking rate, languages in their syllable inventory,
so text alone determines the audio and durations are learnable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .dsp import SAMPLE_RATE, Waveform, write_wav

HOP = 256
# long enough for 30 intelligibility frames after silence removal
MIN_DURATION = 0.6

VOWELS = {
    "a": (730, 1090),
    "e": (530, 1840),
    "i": (270, 2290),
    "o": (570, 840),
    "u": (300, 870),
    "á": (760, 1200),
    "í": (300, 2400),
}
VOICED = set("mnwylrjgbdz")


@dataclass(frozen=True)
class SpeakerSpec:
    name: str
    language: str
    f0: float
    rate: float  # > 1 speaks slower
    count: int


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    consonants: str
    vowels: str
    apostrophe_preserving: bool


LANGUAGES = (
    LanguageSpec("ojibwe", "bdgjkmnpswyz", "aeiou", True),
    LanguageSpec("mikmaq", "gjklmnpqstw", "aeiouí", False),
    LanguageSpec("maliseet", "hklmnpqstw", "aeiouá", False),
)

SPEAKERS = (
    SpeakerSpec("JJ", "ojibwe", 110.0, 1.0, 24),
    SpeakerSpec("NJ", "ojibwe", 210.0, 1.15, 12),
    SpeakerSpec("MJ", "mikmaq", 195.0, 0.9, 12),
    SpeakerSpec("AT", "maliseet", 125.0, 1.05, 16),
)

PUNCTUATION = (".", ",", "?", "!")


def _char_seed(char: str) -> int:
    return zlib.crc32(char.encode("utf-8"))


def char_frames(char: str, rate: float) -> int:
    if char == " ":
        base = 2
    elif char in VOWELS:
        base = 5 + _char_seed(char) % 3
    else:
        base = 2 + _char_seed(char) % 3
    return max(1, int(round(base * rate)))


def _segment(char: str, n: int, f0: float, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    if char == " ":
        return np.zeros(n)
    if char in VOWELS:
        f1, f2 = VOWELS[char]
        out = np.zeros(n)
        k = 1
        while k * f0 < 5000:
            f = k * f0
            gain = np.exp(-(((f - f1) / 180) ** 2)) + 0.6 * np.exp(-(((f - f2) / 250) ** 2)) + 0.05 / k
            out += gain * np.sin(2 * np.pi * f * t)
            k += 1
        return 0.25 * out / max(np.abs(out).max(), 1e-9)
    rng = np.random.default_rng(_char_seed(char))
    if char in VOICED:
        out = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 6))
        return 0.12 * out / max(np.abs(out).max(), 1e-9)
    noise = rng.standard_normal(n)
    centre = 1500 + _char_seed(char) % 4000
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1 / sr)
    spec *= np.exp(-(((freqs - centre) / 700) ** 2))
    out = np.fft.irfft(spec, n)
    return 0.08 * out / max(np.abs(out).max(), 1e-9)


def synthesize_text(text: str, speaker: SpeakerSpec, sr: int = SAMPLE_RATE) -> Waveform:
    """Render text (punctuation and apostrophes are silent) to audio."""
    pieces = []
    for char in text.lower():
        if not (char == " " or char.isalpha()):
            continue
        n = char_frames(char, speaker.rate) * HOP
        seg = _segment(char, n, speaker.f0, sr)
        ramp = min(64, n // 4)
        if ramp:
            fade = np.linspace(0, 1, ramp)
            seg[:ramp] *= fade
            seg[-ramp:] *= fade[::-1]
        pieces.append(seg)
    # pad so the last hop boundary is covered
    pieces.append(np.zeros(HOP))
    return Waveform(np.concatenate(pieces), sr)


def _word(rng: np.random.Generator, lang: LanguageSpec) -> str:
    syllables = []
    for _ in range(int(rng.integers(2, 4))):
        syllables.append(str(rng.choice(list(lang.consonants))) + str(rng.choice(list(lang.vowels))))
    word = "".join(syllables)
    if rng.random() < 0.3:
        cut = int(rng.integers(1, len(word)))
        word = word[:cut] + "'" + word[cut:]
    return word


def make_text(rng: np.random.Generator, lang: LanguageSpec) -> str:
    words = [_word(rng, lang) for _ in range(int(rng.integers(2, 4)))]
    text = " ".join(words)
    if rng.random() < 0.5:
        text = text[0].upper() + text[1:]
    return text + str(rng.choice(PUNCTUATION))


def registry_dict() -> dict:
    return {
        "speakers": {s.name: i for i, s in enumerate(SPEAKERS)},
        "languages": {
            lang.name: {"id": i, "apostrophe_preserving": lang.apostrophe_preserving}
            for i, lang in enumerate(LANGUAGES)
        },
    }


def make_synthetic_corpus(out_dir: str | Path, seed: int = 0, scale: float = 1.0) -> dict[str, Path]:
    """Write ``wavs/``, ``manifest.tsv`` and ``registry.yaml`` under out_dir.

    The default produces 64 utterances; ``scale`` multiplies each speaker's
    utterance count.
    """
    out = Path(out_dir)
    wav_dir = out / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    langs = {lang.name: lang for lang in LANGUAGES}
    rng = np.random.default_rng(seed)
    lines = []
    for spk in SPEAKERS:
        for i in range(max(1, int(round(spk.count * scale)))):
            wav = None
            while wav is None or wav.duration < MIN_DURATION:
                text = make_text(rng, langs[spk.language])
                wav = synthesize_text(text, spk)
            name = f"{spk.name}_{i:03d}.wav"
            write_wav(wav_dir / name, wav)
            lines.append(f"wavs/{name}\t{spk.name}\t{spk.language}\t{text}\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(lines), encoding="utf-8")
    registry = out / "registry.yaml"
    registry.write_text(yaml.safe_dump(registry_dict(), sort_keys=False), encoding="utf-8")
    return {"manifest": manifest, "registry": registry, "wavs": wav_dir}
