"""Corpus ingestion and character tokenization.

Texts are NFC-normalized and lowercased, then every Unicode punctuation
character (categories ``P*``) is dropped.  Languages flagged as
apostrophe-preserving keep U+0027, which carries phonological weight in
Ojibwe orthography.
"""

from __future__ import annotations

import math
import unicodedata
import wave
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import yaml

APOSTROPHE = "'"


class ManifestError(ValueError):
    """A manifest or registry file could not be parsed."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}: line {line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class UnknownCharacterError(KeyError):
    def __init__(self, char: str, text: str):
        self.char = char
        super().__init__(f"character {char!r} (U+{ord(char):04X}) in {text!r} is not in the vocabulary")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Registry:
    """Name -> ID tables for speakers and languages."""

    speakers: dict[str, int]
    languages: dict[str, int]
    apostrophe_languages: frozenset[int] = frozenset()

    def __post_init__(self):
        for kind, table in (("speaker", self.speakers), ("language", self.languages)):
            ids = sorted(table.values())
            if ids != list(range(len(ids))):
                raise ManifestError(f"{kind} ids must be contiguous from 0, got {ids}")

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    @property
    def n_languages(self) -> int:
        return len(self.languages)

    def to_dict(self) -> dict:
        inv = {v: k for k, v in self.languages.items()}
        return {
            "speakers": dict(self.speakers),
            "languages": {
                name: {"id": lid, "apostrophe_preserving": lid in self.apostrophe_languages}
                for lid, name in sorted(inv.items())
            },
        }


def load_registry(path: str | Path) -> Registry:
    """Read a YAML registry.

    Expected layout::

        speakers: {JJ: 0, NJ: 1}
        languages:
          ojibwe: {id: 0, apostrophe_preserving: true}
          mikmaq: {id: 1}
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError("registry file not found", path)
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return registry_from_dict(data, path)


def registry_from_dict(data: Mapping, path: str | Path | None = None) -> Registry:
    if "speakers" not in data or "languages" not in data:
        raise ManifestError("registry needs 'speakers' and 'languages' tables", path)
    speakers = {str(k): int(v) for k, v in data["speakers"].items()}
    languages: dict[str, int] = {}
    keep_apostrophe = set()
    for name, entry in data["languages"].items():
        if isinstance(entry, Mapping):
            lid = int(entry["id"])
            if bool(entry.get("apostrophe_preserving", False)):
                keep_apostrophe.add(lid)
        else:
            lid = int(entry)
        languages[str(name)] = lid
    return Registry(speakers, languages, frozenset(keep_apostrophe))


@dataclass(frozen=True)
class UtteranceRecord:
    audio_path: str
    text: str
    speaker_id: int
    language_id: int
    duration_s: float

    def __post_init__(self):
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise ValueError(f"duration must be positive, got {self.duration_s} for {self.audio_path}")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    language_id: int
    speaker_id: int

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class CharVocab:
    """Sorted character inventory.

    ``pad_id`` sits one past the last symbol, so ``size`` is
    ``len(symbols) + 1`` and no corpus character ever maps to padding.
    """

    symbols: tuple[str, ...]
    apostrophe_languages: frozenset[int] = frozenset()
    unk_policy: str = "error"
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        if self.unk_policy != "error":
            raise ValueError(f"unsupported unk_policy {self.unk_policy!r}")
        object.__setattr__(self, "id_of", {c: i for i, c in enumerate(self.symbols)})

    @property
    def pad_id(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def to_dict(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "apostrophe_languages": sorted(self.apostrophe_languages),
            "unk_policy": self.unk_policy,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CharVocab":
        return cls(
            tuple(data["symbols"]),
            frozenset(int(x) for x in data.get("apostrophe_languages", ())),
            data.get("unk_policy", "error"),
        )


def is_punctuation(char: str) -> bool:
    return unicodedata.category(char).startswith("P")


def normalize_text(text: str, keep_apostrophe: bool = False) -> str:
    """NFC + lowercase + punctuation removal."""
    text = unicodedata.normalize("NFC", text).lower()
    return "".join(
        c for c in text if not is_punctuation(c) or (keep_apostrophe and c == APOSTROPHE)
    )


def build_vocab(
    records: Sequence[UtteranceRecord], apostrophe_languages: Iterable[int] = ()
) -> CharVocab:
    if not records:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    keep = frozenset(apostrophe_languages)
    chars: set[str] = set()
    for rec in records:
        chars.update(normalize_text(rec.text, rec.language_id in keep))
    return CharVocab(tuple(sorted(chars)), keep)


def tokenize(text: str, language_id: int, speaker_id: int, vocab: CharVocab) -> TokenSequence:
    cleaned = normalize_text(text, language_id in vocab.apostrophe_languages)
    ids = []
    for c in cleaned:
        try:
            ids.append(vocab.id_of[c])
        except KeyError:
            raise UnknownCharacterError(c, text) from None
    if not ids:
        raise ValueError(f"text {text!r} is empty after punctuation filtering")
    return TokenSequence(tuple(ids), language_id, speaker_id)


def detokenize(tokens: TokenSequence | Sequence[int], vocab: CharVocab) -> str:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return "".join(vocab.symbols[i] for i in ids if i != vocab.pad_id)


def speaker_durations(records: Iterable[UtteranceRecord]) -> dict[int, float]:
    totals: dict[int, float] = {}
    for rec in records:
        totals[rec.speaker_id] = totals.get(rec.speaker_id, 0.0) + rec.duration_s
    return totals


def oversample(
    records_by_speaker: Mapping[int, Sequence[UtteranceRecord]], tolerance: float = 1.2
) -> list[UtteranceRecord]:
    """Duplicate whole utterances until each speaker roughly matches the largest.

    A speaker whose total is ``ratio`` times smaller than the maximum gets
    ``ceil(ratio)`` full copies of its records when that lands inside
    ``[1, tolerance]`` of the maximum.  Otherwise it gets ``floor(ratio)``
    copies plus a partial round (records taken in order) that stops as soon
    as the maximum is reached.
    """
    if not records_by_speaker:
        raise ValueError("no speakers to oversample")
    totals = {}
    for spk, recs in records_by_speaker.items():
        total = sum(r.duration_s for r in recs)
        if not total > 0:
            raise ValueError(f"speaker {spk} has no audio")
        totals[spk] = total
    target = max(totals.values())

    out: list[UtteranceRecord] = []
    for spk in sorted(records_by_speaker):
        recs = list(records_by_speaker[spk])
        total = totals[spk]
        if total == target:
            out.extend(recs)
            continue
        ratio = target / total
        copies = math.ceil(ratio)
        if copies * total <= tolerance * target:
            out.extend(recs * copies)
            continue
        copies = math.floor(ratio)
        out.extend(recs * copies)
        acc = copies * total
        for rec in recs:
            if acc >= target:
                break
            out.append(rec)
            acc += rec.duration_s
    return out


def group_by_speaker(records: Iterable[UtteranceRecord]) -> dict[int, list[UtteranceRecord]]:
    groups: dict[int, list[UtteranceRecord]] = {}
    for rec in records:
        groups.setdefault(rec.speaker_id, []).append(rec)
    return groups


def wav_duration(path: str | Path) -> float:
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def load_manifest(path: str | Path, registry: Registry) -> list[UtteranceRecord]:
    """Parse ``audio_path<TAB>speaker<TAB>language<TAB>text[<TAB>duration_s]``.

    Without the optional duration column the WAV header is read.  Relative
    audio paths resolve against the manifest's directory.  Blank lines and
    lines starting with ``#`` are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError("manifest not found", path)
    base = path.parent
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (4, 5):
                raise ManifestError(
                    f"expected 4 or 5 tab-separated fields, got {len(parts)}", path, lineno
                )
            audio, speaker, language, text = parts[:4]
            if not audio or not text.strip():
                raise ManifestError("empty audio_path or text field", path, lineno)
            if speaker not in registry.speakers:
                raise ManifestError(f"unknown speaker {speaker!r}", path, lineno)
            if language not in registry.languages:
                raise ManifestError(f"unknown language {language!r}", path, lineno)
            audio_path = Path(audio)
            if not audio_path.is_absolute():
                audio_path = base / audio_path
            try:
                if len(parts) == 5:
                    duration = float(parts[4])
                else:
                    duration = wav_duration(audio_path)
                rec = UtteranceRecord(
                    str(audio_path),
                    text,
                    registry.speakers[speaker],
                    registry.languages[language],
                    duration,
                )
            except (OSError, ValueError, wave.Error) as exc:
                raise ManifestError(str(exc), path, lineno) from exc
            records.append(rec)
    return records


def write_manifest(path: str | Path, records: Iterable[UtteranceRecord], registry: Registry) -> None:
    spk_names = {v: k for k, v in registry.speakers.items()}
    lang_names = {v: k for k, v in registry.languages.items()}
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                f"{rec.audio_path}\t{spk_names[rec.speaker_id]}\t{lang_names[rec.language_id]}"
                f"\t{rec.text}\t{rec.duration_s!r}\n"
            )
