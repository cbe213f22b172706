"""End-to-end acceptance checks, one test (or parameter group) per criterion.

Each criterion records PASS/FAIL in ``helpers.ACCEPTANCE``; the summary is
printed at the end of the session by ``conftest.pytest_terminal_summary``.
"""

import contextlib
import shutil
import time

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from helpers import ACCEPTANCE, attention_params, hydra_params, rel_err, ssd_params
from mixtts.bench import measure_peak_memory, scaling_report
from mixtts.cli import main
from mixtts.data import collate
from mixtts.dsp import SAMPLE_RATE, Waveform, read_mel_cache, write_wav
from mixtts.metrics import (
    F0Track,
    evaluate_testset,
    f0_rmse,
    frechet_distance,
    las_rmse,
    mcd,
    stoi,
    vuv_f1,
)
from mixtts.model.checkpoint import load_checkpoint
from mixtts.model.config import ModelConfig
from mixtts.model.flow import euler_sample
from mixtts.model.network import AcousticModel, count_parameters
from mixtts.seqmix import (
    AttentionParams,
    HydraParams,
    MixerKind,
    SsdParams,
    attention_forward,
    backward_check,
    build_mixer,
    fnet_forward,
    hydra_forward,
    materialize_mixing_matrix,
    naive_dft2_real,
    naive_recurrence,
    ssd_forward,
)
from mixtts.synth import SynthRequest, synthesize
from mixtts.text import (
    CharVocab,
    UtteranceRecord,
    build_vocab,
    is_punctuation,
    oversample,
    registry_from_dict,
    speaker_durations,
    tokenize,
)

D64 = torch.float64
KINDS = [k.value for k in MixerKind]
TITLES = {
    1: "mixer oracle equivalence (200 instances each, 1e-5, < 1 min)",
    2: "unit decay reduces to the cumulative-sum form (100 instances, 1e-6)",
    3: "Hydra off-diagonal blocks have rank <= N",
    4: "gradient checks for the mixers and the full desk loss (1e-4)",
    5: "parameter budget within 15% and FNet smallest",
    6: "desk training halves the loss within 10 min and samples valid mels",
    7: "Euler on v = -x gives x0 * 0.9^10",
    8: "metric suite self-tests",
    9: "runtime exponents and memory doubling ratios",
    10: "tokenizer punctuation/apostrophe rules and oversampling band",
    11: "bit-identical checkpoints and mels across runs",
}


@contextlib.contextmanager
def criterion(n):
    """Record the outcome; a criterion with several parts passes only if all do."""
    ok = False
    try:
        yield
        ok = True
    finally:
        prev = ACCEPTANCE.get(n, (TITLES[n], True))[1]
        ACCEPTANCE[n] = (TITLES[n], prev and ok)
        print(f"criterion {n} {'PASS' if ok else 'FAIL'}: {TITLES[n]}")


# -- 1 ------------------------------------------------------------------------------


def test_c01_oracle_equivalence():
    with criterion(1):
        gen = torch.Generator().manual_seed(101)
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst = {"ssd": 0.0, "hydra": 0.0, "fnet": 0.0}
        for _ in range(200):
            L = int(rng.integers(1, 65))
            p = ssd_params(L, int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), gen)
            x = torch.randn(L, p.B_bar.shape[2], generator=gen, dtype=D64)
            worst["ssd"] = max(worst["ssd"], rel_err(ssd_forward(x, p), naive_recurrence(x.numpy(), p)))

            L = int(rng.integers(1, 65))
            p = hydra_params(L, int(rng.integers(1, 5)), 1, gen)
            x = torch.randn(L, 1, generator=gen, dtype=D64)
            M = materialize_mixing_matrix(p)
            worst["hydra"] = max(worst["hydra"], rel_err(hydra_forward(x, p)[:, 0], M @ x[:, 0].numpy()))

            L = int(rng.integers(1, 65))
            x = torch.randn(L, int(rng.integers(1, 9)), generator=gen, dtype=D64)
            worst["fnet"] = max(worst["fnet"], rel_err(fnet_forward(x), naive_dft2_real(x.numpy())))
        elapsed = time.perf_counter() - t0
        print(f"worst relative errors {worst}, {elapsed:.1f} s")
        assert all(v < 1e-5 for v in worst.values()), worst
        assert elapsed < 60


# -- 2 ------------------------------------------------------------------------------


def test_c02_linear_attention_reduction():
    with criterion(2):
        gen = torch.Generator().manual_seed(202)
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(100):
            L = int(rng.integers(1, 65))
            p = ssd_params(L, int(rng.integers(1, 5)), 2, 3, gen, alpha=torch.ones(L, dtype=D64))
            x = torch.randn(L, 2, generator=gen, dtype=D64)
            u = torch.cumsum(torch.einsum("lni,li->ln", p.B_bar, x), dim=0)
            worst = max(worst, rel_err(ssd_forward(x, p), torch.einsum("lon,ln->lo", p.C, u)))
        assert worst < 1e-6, worst


# -- 3 ------------------------------------------------------------------------------


def test_c03_quasiseparable_rank():
    with criterion(3):
        gen = torch.Generator().manual_seed(303)
        rng = np.random.default_rng(303)
        L = 16
        for i in range(50):
            N = (1, 2, 4)[i % 3]
            M = materialize_mixing_matrix(hydra_params(L, N, 1, gen))
            blocks = []
            for k in range(1, L):
                blocks += [M[k:, :k], M[:k, k:]]
            for _ in range(20):
                # random strictly-lower submatrix: rows all after columns
                k = int(rng.integers(1, L))
                rows = rng.choice(np.arange(k, L), size=int(rng.integers(1, L - k + 1)), replace=False)
                cols = rng.choice(np.arange(0, k), size=int(rng.integers(1, k + 1)), replace=False)
                blocks += [M[np.ix_(rows, cols)], M[np.ix_(cols, rows)]]
            for block in blocks:
                s = np.linalg.svd(block, compute_uv=False)
                assert np.all(s[N:] < 1e-8 * s[0]), (N, s)


# -- 4 ------------------------------------------------------------------------------


def _full_loss_gradient_error(kind, prepared, n_params=32, step=1e-6):
    torch.manual_seed(4)
    cfg = ModelConfig(mixer=kind, n_vocab=prepared.vocab.size, n_speakers=4, n_languages=3, desk_scale=True)
    model = AcousticModel(cfg)
    model.set_mel_stats(prepared.mel_mean, prepared.mel_std)
    model = model.double().eval()
    batch = collate(prepared.utterances[:2], prepared.vocab.pad_id)
    batch.mels = batch.mels.double()
    with torch.no_grad():
        c = model.condition(batch)
        durations = model.align(c.mu_tokens, model.normalize(batch.mels), batch.token_mask, batch.mel_mask)
    # The duration predictor reads a stop-gradient copy of the encoder output.
    # Freezing that copy at the unperturbed value makes the finite-difference
    # objective the one autograd differentiates.
    enc0 = c.encoder_out.detach()
    model.predict_durations = lambda enc, mask: model.duration_predictor(enc0, mask)

    def loss():
        return model.loss(batch, torch.Generator().manual_seed(0), durations)["total"]

    params = [p for p in model.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss(), params, allow_unused=True)
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(4)
    flat_ids = rng.choice(sizes.sum(), size=n_params, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = scale = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            i = int(np.searchsorted(offsets, fid, side="right") - 1)
            j = int(fid - offsets[i])
            flat = params[i].view(-1)
            orig = flat[j].item()
            flat[j] = orig + step
            up = loss().item()
            flat[j] = orig - step
            down = loss().item()
            flat[j] = orig
            fd = (up - down) / (2 * step)
            auto = grads[i].view(-1)[j].item() if grads[i] is not None else 0.0
            worst = max(worst, abs(auto - fd))
            scale = max(scale, abs(fd))
    return worst / scale


def test_c04_mixer_gradients():
    with criterion(4):
        gen = torch.Generator().manual_seed(404)
        x = torch.randn(6, 3, generator=gen, dtype=D64)
        errs = {"fnet": backward_check(fnet_forward, [x])}
        p = ssd_params(6, 2, 3, 3, gen)
        errs["ssd"] = backward_check(lambda x, a, B, C: ssd_forward(x, SsdParams(a, B, C)),
                                     [x, p.alpha, p.B_bar, p.C], step=1e-5)
        h = hydra_params(6, 2, 3, gen)
        errs["hydra"] = backward_check(
            lambda x, a, B, C, D: hydra_forward(x, HydraParams(SsdParams(a, B, C), h.backward_ss, D)),
            [x, h.forward_ss.alpha, h.forward_ss.B_bar, h.forward_ss.C, h.D], step=1e-5)
        ap = attention_params(4, gen)
        xa = torch.randn(5, 4, generator=gen, dtype=D64)
        errs["attention"] = backward_check(
            lambda x, q, k, v, o: attention_forward(x, AttentionParams(q, k, v, o, 2, ap.b_q, ap.b_k, ap.b_v, ap.b_o)),
            [xa, ap.w_q, ap.w_k, ap.w_v, ap.w_o], step=1e-5)
        print("mixer gradient errors", errs)
        assert all(v < 1e-4 for v in errs.values()), errs


@pytest.mark.parametrize("kind", KINDS)
def test_c04_full_loss_gradient(kind, prepared):
    with criterion(4):
        err = _full_loss_gradient_error(kind, prepared)
        print(f"{kind} full-loss gradient error {err:.2e}")
        assert err < 1e-4


# -- 5 ------------------------------------------------------------------------------


def test_c05_parameter_budget():
    with criterion(5):
        quoted = {"attention": 40e6, "mamba2": 38e6, "hydra": 39e6, "fnet": 31e6}
        counts = {k: count_parameters(ModelConfig(mixer=k)) for k in KINDS}
        print({k: f"{v / 1e6:.2f}M" for k, v in counts.items()})
        for k, n in counts.items():
            assert abs(n - quoted[k]) <= 0.15 * quoted[k], (k, n)
        assert all(counts["fnet"] < counts[k] for k in KINDS if k != "fnet")


# -- 6 ------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
def test_c06_desk_training(kind, prepared_dir, tmp_path):
    with criterion(6):
        run = tmp_path / kind
        t0 = time.perf_counter()
        assert main(["train", "--data", str(prepared_dir), "--out", str(run), "--desk-scale",
                     "--mixer", kind, "--epochs", "200", "--threads", "1"]) == 0
        wall = time.perf_counter() - t0
        kv = dict(line.split("=") for line in (run / "train.kv").read_text().splitlines())
        ratio = float(kv["loss_ratio"])
        print(f"{kind}: loss ratio {ratio:.4f}, wall {wall:.1f} s")

        model, meta, _ = load_checkpoint(run / "model.ckpt")
        vocab = CharVocab.from_dict(meta["vocab"])
        registry = registry_from_dict(meta["registry"])
        for i, (spk, lang, text) in enumerate([("JJ", "ojibwe", "aaniin boozhoo"), ("MJ", "mikmaq", "kwe pjila'si")]):
            res = synthesize(model, SynthRequest(text, spk, lang), vocab, registry, seed=i, vocode=False)
            mel = res.mel.values
            assert mel.shape == (80, int(res.durations.sum()))
            assert np.all(np.isfinite(mel))
        assert ratio < 0.5
        assert wall < 600


# -- 7 ------------------------------------------------------------------------------


def test_c07_euler_closed_form():
    with criterion(7):
        x0 = torch.randn(3, 17, 80, dtype=D64, generator=torch.Generator().manual_seed(7))
        mask = torch.ones(3, 17, dtype=torch.bool)
        out = euler_sample(lambda x, t, m: -x, x0, mask, 10)
        assert torch.allclose(out, x0 * 0.9**10, rtol=1e-14, atol=0)


# -- 8 ------------------------------------------------------------------------------


def _voiced(seconds, seed):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    f0 = 140 * (1 + 0.1 * np.sin(2 * np.pi * 0.7 * t))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    x = sum(np.sin(k * phase) / k for k in range(1, 20)) * (0.7 + 0.3 * np.sin(2 * np.pi * 4 * t))
    return 0.3 * x / np.sqrt(np.mean(x**2)) + 0.005 * np.random.default_rng(seed).standard_normal(len(t))


def test_c08_metric_self_tests(tmp_path):
    with criterion(8):
        a = Waveform(_voiced(1.0, 0), SAMPLE_RATE)
        assert las_rmse(a, a) == pytest.approx(0.0, abs=1e-6)
        assert mcd(a, a) == pytest.approx(0.0, abs=1e-6)
        assert stoi(a, a) == pytest.approx(1.0, abs=1e-6)

        f0 = np.array([0, 120, 130, 0, 140, 150.0])
        track = F0Track(f0, 0.01)
        assert f0_rmse(track, track) == pytest.approx(0.0, abs=1e-6)
        assert vuv_f1(track, track) == pytest.approx(1.0, abs=1e-6)
        assert f0_rmse(track, F0Track(np.where(f0 > 0, f0 + 10, 0), 0.01)) == pytest.approx(10.0, abs=1e-9)

        truth = np.array([1] * 12 + [0] * 2, dtype=float) * 100
        pred = np.array([1] * 8 + [0] * 4 + [1] * 2, dtype=float) * 100
        assert vuv_f1(F0Track(truth, 0.01), F0Track(pred, 0.01)) == pytest.approx(8 / 11, abs=1e-9)

        rng = np.random.default_rng(8)
        base = rng.normal(size=(4000, 13))
        d = rng.normal(size=13)
        assert frechet_distance(base, base + d) == pytest.approx(float(d @ d), rel=0.01)
        assert frechet_distance(base, base) == pytest.approx(0.0, abs=1e-6)

        refs, syn = tmp_path / "refs", tmp_path / "syn"
        refs.mkdir()
        lines = []
        for i in range(3):
            write_wav(refs / f"u{i}.wav", Waveform(_voiced(0.8, i), SAMPLE_RATE))
            lines.append(f"refs/u{i}.wav\ttext\tJJ\tojibwe")
        shutil.copytree(refs, syn)
        manifest = tmp_path / "test.tsv"
        manifest.write_text("\n".join(lines) + "\n")
        rep = evaluate_testset(manifest, syn)
        assert rep.n_pairs == 3
        for v in (rep.f0_rmse, rep.mcd, rep.las_rmse, rep.mfcc_fid):
            assert v == pytest.approx(0.0, abs=1e-6)
        for v in (rep.stoi, rep.vuv_f1):
            assert v == pytest.approx(1.0, abs=1e-6)


# -- 9 ------------------------------------------------------------------------------


def test_c09_scaling_and_memory():
    with criterion(9):
        fits = {f.mixer: f for f in scaling_report(KINDS, seq_lens=(256, 512, 1024, 2048, 4096))}
        print({k: round(f.slope, 3) for k, f in fits.items()})
        assert fits["attention"].slope >= 1.7
        assert fits["fnet"].slope <= 1.4
        assert fits["mamba2"].slope <= 1.3
        assert fits["hydra"].slope <= 1.3
        for kind in KINDS:
            torch.manual_seed(0)
            layer = build_mixer(kind, 80)
            ratio = measure_peak_memory(layer, 1, 2048) / measure_peak_memory(layer, 1, 1024)
            print(f"{kind} memory doubling ratio {ratio:.3f}")
            assert ratio >= 2.5 if kind == "attention" else ratio <= 2.3


# -- 10 -----------------------------------------------------------------------------

REGISTRY = registry_from_dict(
    {
        "speakers": {"JJ": 0, "MJ": 1},
        "languages": {
            "ojibwe": {"id": 0, "apostrophe_preserving": True},
            "mikmaq": {"id": 1, "apostrophe_preserving": False},
            "maliseet": {"id": 2, "apostrophe_preserving": False},
        },
    }
)
PUNCT = ".,!?;:'\"()-"


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcdefg " + PUNCT, min_size=1, max_size=40), st.sampled_from([0, 1, 2]))
def _tokenizer_property(text, language):
    assume(any(c.isalpha() for c in text))
    vocab = build_vocab([UtteranceRecord("a.wav", "abcdefg '", 0, 0, 1.0)], REGISTRY.apostrophe_languages)
    toks = tokenize(text, language, 0, vocab)
    chars = [vocab.symbols[i] for i in toks.ids]
    keep = language in REGISTRY.apostrophe_languages
    assert not any(is_punctuation(c) and c != "'" for c in chars)
    assert ("'" in chars) == (keep and "'" in text)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.floats(0.5, 15.0)), min_size=1, max_size=6))
def _oversample_property(totals):
    top = max(n * d for n, d in totals)
    assume(all(d <= 0.2 * top for _, d in totals))
    groups = {
        s: [UtteranceRecord(f"{s}_{i}.wav", "a", s, 0, d) for i in range(n)] for s, (n, d) in enumerate(totals)
    }
    for total in speaker_durations(oversample(groups)).values():
        assert top - 1e-9 <= total <= 1.2 * top + 1e-9


def test_c10_tokenizer_and_oversampling():
    with criterion(10):
        _tokenizer_property()
        _oversample_property()


# -- 11 -----------------------------------------------------------------------------


def test_c11_reproducibility(prepared_dir, tmp_path):
    with criterion(11):
        ckpts = []
        for r in range(2):
            run = tmp_path / f"run{r}"
            assert main(["train", "--data", str(prepared_dir), "--out", str(run), "--desk-scale", "--mixer", "hydra",
                         "--epochs", "3", "--seed", "11", "--threads", "1", "--checkpoint-every", "1"]) == 0
            ckpts.append(run)
        for name in ("model.ckpt", "checkpoints/epoch_0001.ckpt", "checkpoints/epoch_0003.ckpt"):
            assert (ckpts[0] / name).read_bytes() == (ckpts[1] / name).read_bytes(), name

        text = tmp_path / "lines.txt"
        text.write_text("JJ\tojibwe\taaniin\nMJ\tmikmaq\tkwe'\n")
        mels = []
        for r in range(2):
            syn = tmp_path / f"syn{r}"
            assert main(["synth", "--checkpoint", str(ckpts[r] / "model.ckpt"), "--text", str(text),
                         "--out", str(syn), "--seed", "5", "--threads", "1"]) == 0
            mels.append([(syn / f"{i:04d}.mel").read_bytes() for i in range(2)])
        assert mels[0] == mels[1]
        assert read_mel_cache(tmp_path / "syn0" / "0000.mel").shape[0] == 80
