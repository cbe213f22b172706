import pytest
import torch

from mixtts.bench import (
    BenchReport,
    MemoryTracker,
    bench_batch,
    loglog_fit,
    measure_peak_memory,
    measure_rtf,
    measure_throughput,
    parameter_bytes,
    parameter_checksum,
    rtf,
    run_bench,
    scaling_report,
    write_bench_report,
)
from mixtts.model.config import ModelConfig
from mixtts.model.network import AcousticModel
from mixtts.seqmix import MixerKind, build_mixer

KINDS = [k.value for k in MixerKind]


@pytest.fixture(scope="module")
def models():
    out = {}
    for kind in KINDS:
        torch.manual_seed(0)
        out[kind] = AcousticModel(ModelConfig(mixer=kind, n_vocab=30, desk_scale=True)).eval()
    return out


def test_rtf_arithmetic():
    assert rtf(0.5, 10.0) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        rtf(0.0, 1.0)


def test_loglog_fit_recovers_exponent():
    xs = [256, 512, 1024, 2048]
    slope, r2 = loglog_fit(xs, [3e-9 * x**2 for x in xs])
    assert slope == pytest.approx(2.0) and r2 == pytest.approx(1.0)


def test_bench_report_invariants():
    with pytest.raises(ValueError):
        BenchReport("fnet", 1, 8, 0.0, 1.0, 0.1, 10, 1)


def test_throughput_errors_and_bound(models):
    m = models["fnet"]
    with pytest.raises(ValueError):
        measure_throughput(m, 1, n_batches=0)
    one, _ = measure_throughput(m, 1, n_batches=3, n_tokens=16)
    two, _ = measure_throughput(m, 2, n_batches=3, n_tokens=16)
    # batching amortises overhead but never more than doubles work done per second
    assert 0.5 * one <= two <= 2.5 * one


def test_rtf_requires_single_item(models):
    m = models["attention"]
    with pytest.raises(ValueError):
        measure_rtf(m, bench_batch(m, 2, 8))
    assert measure_rtf(m, bench_batch(m, 1, 8), n_runs=2) > 0


@pytest.mark.parametrize("kind", KINDS)
def test_peak_memory_monotone_and_exact(models, kind):
    m = models[kind]
    small = measure_peak_memory(m, 1, 16)
    big = measure_peak_memory(m, 32, 16)
    assert parameter_bytes(m) <= small <= big
    assert measure_peak_memory(m, 1, 16) == small
    with pytest.raises(ValueError):
        measure_peak_memory(m, 0, 16)


def test_memory_tracker_counts_new_storage():
    a = torch.randn(1000)
    with MemoryTracker() as t:
        b = a * 2
        c = b + 1
        del b, c
    assert t.peak == 2 * 4000


@pytest.mark.parametrize("kind", KINDS)
def test_mixer_memory_doubling(kind):
    torch.manual_seed(0)
    layer = build_mixer(kind, 80)
    ratio = measure_peak_memory(layer, 1, 2048) / measure_peak_memory(layer, 1, 1024)
    if kind == "attention":
        assert ratio >= 2.5
    else:
        assert ratio <= 2.3


def test_run_bench_keeps_parameters(models, tmp_path):
    m = models["mamba2"]
    before = parameter_checksum(m)
    report = run_bench(m, 2, 8, n_batches=2)
    assert parameter_checksum(m) == before
    assert report.mixer == "mamba2" and report.batch == 2 and report.peak_bytes >= parameter_bytes(m)
    fits = scaling_report(["fnet"], [64, 128, 256, 512], repeats=2)
    paths = write_bench_report([report], fits, tmp_path)
    header = paths["bench"].read_text().splitlines()[0].split("\t")
    assert header[:3] == ["mixer", "batch", "seq_len"] and "throughput_ups" in header and "rtf" in header
    kv = paths["kv"].read_text()
    assert "mamba2.peak_bytes=" in kv and "fnet.slope=" in kv and "fnet.r2=" in kv


def test_scaling_report_needs_four_lengths():
    with pytest.raises(ValueError):
        scaling_report(["fnet"], [64, 128, 256])
