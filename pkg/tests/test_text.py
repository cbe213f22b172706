import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mixtts.text import (
    CharVocab,
    ManifestError,
    UnknownCharacterError,
    UtteranceRecord,
    build_vocab,
    detokenize,
    group_by_speaker,
    is_punctuation,
    load_manifest,
    normalize_text,
    oversample,
    registry_from_dict,
    speaker_durations,
    tokenize,
    write_manifest,
)

OJIBWE, MIKMAQ = 0, 1
REGISTRY = registry_from_dict(
    {
        "speakers": {"JJ": 0, "MJ": 1, "NJ": 2},
        "languages": {
            "ojibwe": {"id": OJIBWE, "apostrophe_preserving": True},
            "mikmaq": {"id": MIKMAQ, "apostrophe_preserving": False},
        },
    }
)


def rec(text, speaker=0, language=OJIBWE, duration=1.0, path="a.wav"):
    return UtteranceRecord(path, text, speaker, language, duration)


def test_vocab_is_sorted_union():
    v = build_vocab([rec("ab"), rec("bc")])
    assert v.symbols == ("a", "b", "c")
    assert [v.id_of[c] for c in "abc"] == [0, 1, 2]
    assert v.pad_id == 3 and v.size == 4


def test_vocab_deterministic_and_drops_punctuation():
    records = [rec("a."), rec("b, c!")]
    assert build_vocab(records) == build_vocab(list(records))
    assert "." not in build_vocab(records).symbols


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocab([])


def test_apostrophe_kept_only_for_flagged_language():
    records = [rec("ma'iingan", language=OJIBWE), rec("aqq.", language=MIKMAQ)]
    v = build_vocab(records, REGISTRY.apostrophe_languages)
    toks = tokenize("ma'iingan", OJIBWE, 0, v)
    assert v.id_of["'"] in toks.ids
    mik = tokenize("aqq.", MIKMAQ, 1, v)
    assert detokenize(mik, v) == "aqq"
    assert tokenize("a'q", MIKMAQ, 1, v).ids == tokenize("aq", MIKMAQ, 1, v).ids


def test_roundtrip_and_case_folding():
    v = build_vocab([rec("abc")])
    t = tokenize("ABC", OJIBWE, 0, v)
    assert detokenize(t, v) == "abc"
    assert t.language_id == OJIBWE and len(t) == 3


def test_unknown_character_names_it():
    v = build_vocab([rec("abc")])
    with pytest.raises(UnknownCharacterError, match="z"):
        tokenize("abz", OJIBWE, 0, v)


def test_all_punctuation_text_is_an_error():
    v = build_vocab([rec("abc")])
    with pytest.raises(ValueError):
        tokenize("?!", OJIBWE, 0, v)


def test_vocab_serialization_roundtrip():
    v = build_vocab([rec("ma'a")], REGISTRY.apostrophe_languages)
    assert CharVocab.from_dict(v.to_dict()) == v


@given(st.permutations(["abc", "de'f", "xy.z", "Ab q"]))
def test_vocab_permutation_invariant(texts):
    base = build_vocab([rec(t) for t in ["abc", "de'f", "xy.z", "Ab q"]], {OJIBWE})
    assert build_vocab([rec(t) for t in texts], {OJIBWE}) == base


@given(st.text(alphabet="abcde' .,?!", min_size=1, max_size=20), st.booleans())
def test_no_punctuation_survives(text, keep):
    cleaned = normalize_text(text, keep_apostrophe=keep)
    for c in cleaned:
        assert not is_punctuation(c) or (keep and c == "'")


@given(st.text(alphabet="abcxyz ", min_size=1, max_size=30).filter(lambda s: s.strip()))
def test_detokenize_inverts_tokenize(text):
    v = build_vocab([rec("abcxyz ")])
    assert detokenize(tokenize(text, OJIBWE, 0, v), v) == text


# -- oversampling -----------------------------------------------------------


def _by_speaker(totals):
    out = {}
    for spk, (n, each) in enumerate(totals):
        out[spk] = [rec("a", speaker=spk, duration=each, path=f"{spk}_{i}.wav") for i in range(n)]
    return out


def test_oversample_ceiling_factor_from_table_durations():
    groups = {0: [rec("a", 0, duration=709.4 * 60)], 1: [rec("a", 1, duration=143.0 * 60, path="m.wav")]}
    out = oversample(groups)
    assert sum(r.speaker_id == 1 for r in out) == 5
    assert sum(r.speaker_id == 0 for r in out) == 1


def test_oversample_ten_vs_thirty_minutes():
    out = oversample({0: [rec("a", 0, duration=600.0)], 1: [rec("a", 1, duration=1800.0)]})
    assert sum(r.speaker_id == 0 for r in out) == 3
    totals = speaker_durations(out)
    assert totals[0] == pytest.approx(totals[1])


def test_oversample_equal_durations_is_identity():
    groups = _by_speaker([(3, 2.0), (2, 3.0)])
    out = oversample(groups)
    assert out == groups[0] + groups[1]


def test_oversample_rejects_empty():
    with pytest.raises(ValueError):
        oversample({})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.floats(0.5, 15.0)), min_size=1, max_size=6))
def test_oversample_band(totals):
    original = {s: n * d for s, (n, d) in enumerate(totals)}
    top = max(original.values())
    # the band is reachable with whole utterances only when none exceeds a fifth of the target
    assume(all(d <= 0.2 * top for _, d in totals))
    dur = speaker_durations(oversample(_by_speaker(totals)))
    for spk, total in dur.items():
        assert top - 1e-9 <= total <= 1.2 * top + 1e-9
        each = totals[spk][1]
        assert math.isclose(total / each, round(total / each), abs_tol=1e-6)
    heaviest = max(original, key=original.get)
    assert dur[heaviest] == pytest.approx(original[heaviest])


def test_oversample_coarse_utterances_land_nearest_above():
    # one 2 s clip against 3 s: 2 copies is the smallest total reaching the maximum
    out = oversample({0: [rec("a", 0, duration=2.0)], 1: [rec("a", 1, duration=3.0, path="b.wav")]})
    assert speaker_durations(out)[0] == 4.0


def test_oversample_order_is_deterministic():
    groups = _by_speaker([(2, 1.0), (1, 5.0)])
    out = oversample(groups)
    assert [r.speaker_id for r in out] == sorted(r.speaker_id for r in out)
    assert out == oversample(groups)


# -- manifests ---------------------------------------------------------------


def _write(tmp_path, body):
    p = tmp_path / "m.tsv"
    p.write_text(body, encoding="utf-8")
    return p


def test_manifest_three_lines(tmp_path):
    p = _write(tmp_path, "a.wav\tJJ\tojibwe\tabc\t1.0\nb.wav\tMJ\tmikmaq\taqq\t2.0\nc.wav\tNJ\tojibwe\tx\t0.5\n")
    recs = load_manifest(p, REGISTRY)
    assert len(recs) == 3
    assert recs[1].speaker_id == 1 and recs[1].language_id == MIKMAQ
    assert recs[0].audio_path == str(tmp_path / "a.wav")


def test_manifest_missing_text_cites_line(tmp_path):
    p = _write(tmp_path, "a.wav\tJJ\tojibwe\tabc\t1.0\nb.wav\tJJ\tojibwe\n")
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(p, REGISTRY)


def test_manifest_duplicates_allowed(tmp_path):
    p = _write(tmp_path, "a.wav\tJJ\tojibwe\tabc\t1.0\na.wav\tJJ\tojibwe\tabc\t1.0\n")
    assert len(load_manifest(p, REGISTRY)) == 2


def test_manifest_unknown_speaker(tmp_path):
    p = _write(tmp_path, "a.wav\tZZ\tojibwe\tabc\t1.0\n")
    with pytest.raises(ManifestError, match="ZZ"):
        load_manifest(p, REGISTRY)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "nope.tsv", REGISTRY)


def test_manifest_roundtrip(tmp_path):
    recs = [rec("abc", 0, OJIBWE, 1.5, str(tmp_path / "a.wav")), rec("aqq", 1, MIKMAQ, 2.0, str(tmp_path / "b.wav"))]
    write_manifest(tmp_path / "out.tsv", recs, REGISTRY)
    assert load_manifest(tmp_path / "out.tsv", REGISTRY) == recs


def test_group_by_speaker():
    groups = group_by_speaker([rec("a", 1), rec("b", 0), rec("c", 1)])
    assert sorted(groups) == [0, 1] and len(groups[1]) == 2


def test_record_rejects_nonpositive_duration():
    with pytest.raises(ValueError):
        rec("a", duration=0.0)
