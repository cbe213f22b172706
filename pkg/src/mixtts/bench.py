"""Throughput, real-time factor, peak memory and runtime scaling per mixer."""

from __future__ import annotations

import hashlib
import statistics
import time
import weakref
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten

from .dsp import MelConfig
from .model.network import AcousticModel, Batch
from .seqmix import MixerKind, build_mixer
from .seqmix.layers import MixerLayer

WARMUP = 2
REPEATS = 5
BENCH_KEYS = ("mixer", "batch", "seq_len", "throughput_ups", "audio_sps", "rtf", "peak_bytes", "threads", "dtype")
SCALING_KEYS = ("mixer", "seq_len", "seconds")
FIT_KEYS = ("mixer", "slope", "r2", "reliable")


@dataclass
class BenchReport:
    mixer: str
    batch: int
    seq_len: int  # tokens per utterance
    throughput_ups: float  # utterances per second
    audio_sps: float  # seconds of generated audio per wall second
    rtf: float
    peak_bytes: int
    threads: int
    dtype: str = "float32"

    def __post_init__(self):
        if self.throughput_ups <= 0 or self.rtf <= 0:
            raise ValueError("throughput and rtf must be positive")


@dataclass
class ScalingFit:
    mixer: str
    slope: float
    r2: float
    seq_lens: tuple[int, ...]
    seconds: tuple[float, ...]

    @property
    def reliable(self) -> bool:
        return self.r2 >= 0.95


class MemoryTracker(TorchDispatchMode):
    """Counts bytes of tensor storages created inside the context.

    Storages are keyed by address and released when the last tensor viewing
    them is garbage collected; storages that arrive as op inputs were
    allocated outside the context and are never counted.  Sizes come from
    the ops themselves, so results are exact and repeatable for a fixed
    shape, unlike process RSS.
    """

    def __init__(self):
        super().__init__()
        self.live: dict[int, list[int]] = {}
        self.current = 0
        self.peak = 0

    def _release(self, key: int) -> None:
        entry = self.live.get(key)
        if entry is None:
            return
        entry[1] -= 1
        if entry[1] == 0:
            self.current -= entry[0]
            del self.live[key]

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        inputs = {
            t.untyped_storage().data_ptr() for t in tree_flatten((args, kwargs))[0] if isinstance(t, torch.Tensor)
        }
        for t in tree_flatten(out)[0]:
            if not isinstance(t, torch.Tensor):
                continue
            storage = t.untyped_storage()
            key = storage.data_ptr()
            if key in self.live:
                self.live[key][1] += 1
            elif key in inputs:
                continue
            else:
                self.live[key] = [storage.nbytes(), 1]
                self.current += storage.nbytes()
                self.peak = max(self.peak, self.current)
            weakref.finalize(t, self._release, key)
        return out


def parameter_checksum(model: nn.Module) -> str:
    h = hashlib.sha1()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def parameter_bytes(model: nn.Module) -> int:
    return sum(t.numel() * t.element_size() for t in model.state_dict().values())


def bench_batch(model: AcousticModel, batch_size: int, n_tokens: int, seed: int = 0) -> Batch:
    """Random in-vocabulary token batch of uniform length."""
    if batch_size < 1 or n_tokens < 1:
        raise ValueError("batch_size and n_tokens must be >= 1")
    g = torch.Generator().manual_seed(seed)
    cfg = model.cfg
    tokens = torch.randint(0, cfg.n_vocab - 1, (batch_size, n_tokens), generator=g)
    return Batch(
        tokens=tokens,
        token_mask=torch.ones_like(tokens, dtype=torch.bool),
        speakers=torch.randint(0, cfg.n_speakers, (batch_size,), generator=g),
        languages=torch.randint(0, cfg.n_languages, (batch_size,), generator=g),
    )


def _synth_once(model: AcousticModel, batch: Batch, n_steps: int, seed: int):
    gen = torch.Generator().manual_seed(seed)
    t0 = time.perf_counter()
    _, durations, _ = model.synthesize(batch, n_steps=n_steps, generator=gen)
    return time.perf_counter() - t0, durations.sum(dim=1)


def _timed_runs(model, batch, n_batches, n_steps, seed):
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    model.eval()
    for _ in range(WARMUP):
        _synth_once(model, batch, n_steps, seed)
    return [_synth_once(model, batch, n_steps, seed) for _ in range(n_batches)]


def frames_to_seconds(frames, mel_cfg: MelConfig = MelConfig()) -> float:
    return float(frames) * mel_cfg.hop / mel_cfg.sample_rate


def measure_throughput(
    model: AcousticModel, batch_size: int, n_batches: int = REPEATS, n_tokens: int = 32, n_steps: int = 10, seed: int = 0
) -> tuple[float, float]:
    """(utterances/s, audio-seconds/s), median over n_batches after warm-up."""
    batch = bench_batch(model, batch_size, n_tokens, seed)
    runs = _timed_runs(model, batch, n_batches, n_steps, seed)
    wall = statistics.median(r[0] for r in runs)
    audio = frames_to_seconds(runs[0][1].sum())
    return batch_size / wall, audio / wall


def rtf(wall_seconds: float, audio_seconds: float) -> float:
    if wall_seconds <= 0 or audio_seconds <= 0:
        raise ValueError("wall time and audio duration must be positive")
    return wall_seconds / audio_seconds


def measure_rtf(model: AcousticModel, batch: Batch, n_runs: int = REPEATS, n_steps: int = 10, seed: int = 0) -> float:
    """Acoustic-model wall time per second of generated audio, batch size 1."""
    if batch.tokens.shape[0] != 1:
        raise ValueError("real-time factor is measured at batch size 1")
    runs = _timed_runs(model, batch, n_runs, n_steps, seed)
    wall = statistics.median(r[0] for r in runs)
    return rtf(wall, frames_to_seconds(runs[0][1].sum()))


def measure_peak_memory(
    model: AcousticModel | MixerLayer, batch_size: int, seq_len: int, n_steps: int = 10, seed: int = 0
) -> int:
    """Parameter bytes plus the activation high-water mark of one forward call.

    A MixerLayer is driven with a random (batch, seq_len, width) input; a
    full model synthesizes a random batch of seq_len tokens.
    """
    if batch_size < 1 or seq_len < 1:
        raise ValueError("batch_size and seq_len must be >= 1")
    model.eval()
    if isinstance(model, MixerLayer):
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(batch_size, seq_len, model.width, generator=g)
        run = lambda: model(x)
    else:
        batch = bench_batch(model, batch_size, seq_len, seed)
        gen = torch.Generator().manual_seed(seed)
        run = lambda: model.synthesize(batch, n_steps=n_steps, generator=gen)
    with torch.no_grad(), MemoryTracker() as tracker:
        out = run()
        del out
    return parameter_bytes(model) + tracker.peak


def loglog_fit(xs, ys) -> tuple[float, float]:
    """Least-squares slope of log y on log x and its R²."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), r2


def time_mixer(layer: MixerLayer, seq_len: int, batch_size: int = 1, repeats: int = REPEATS, seed: int = 0) -> float:
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(batch_size, seq_len, layer.width, generator=g)
    layer.eval()
    times = []
    with torch.no_grad():
        for i in range(WARMUP + repeats):
            t0 = time.perf_counter()
            layer(x)
            if i >= WARMUP:
                times.append(time.perf_counter() - t0)
    return statistics.median(times)


def scaling_report(
    mixers, seq_lens=(256, 512, 1024, 2048, 4096), width: int = 80, repeats: int = REPEATS, seed: int = 0
) -> list[ScalingFit]:
    """Fitted runtime exponent per mixer, single-threaded."""
    seq_lens = tuple(int(s) for s in seq_lens)
    if len(seq_lens) < 4:
        raise ValueError("need at least 4 sequence lengths for a scaling fit")
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        fits = []
        for kind in mixers:
            torch.manual_seed(seed)
            layer = build_mixer(MixerKind.parse(kind), width)
            secs = tuple(time_mixer(layer, L, repeats=repeats, seed=seed) for L in seq_lens)
            slope, r2 = loglog_fit(seq_lens, secs)
            fits.append(ScalingFit(MixerKind.parse(kind).value, slope, r2, seq_lens, secs))
        return fits
    finally:
        torch.set_num_threads(threads)


def run_bench(
    model: AcousticModel, batch_size: int, n_tokens: int, n_batches: int = REPEATS, n_steps: int = 10, seed: int = 0
) -> BenchReport:
    before = parameter_checksum(model)
    ups, aps = measure_throughput(model, batch_size, n_batches, n_tokens, n_steps, seed)
    one = bench_batch(model, 1, n_tokens, seed)
    report = BenchReport(
        mixer=model.cfg.mixer.value if hasattr(model.cfg.mixer, "value") else str(model.cfg.mixer),
        batch=batch_size,
        seq_len=n_tokens,
        throughput_ups=ups,
        audio_sps=aps,
        rtf=measure_rtf(model, one, n_batches, n_steps, seed),
        peak_bytes=measure_peak_memory(model, batch_size, n_tokens, n_steps, seed),
        threads=torch.get_num_threads(),
        dtype=str(next(model.parameters()).dtype).removeprefix("torch."),
    )
    if parameter_checksum(model) != before:
        raise RuntimeError("benchmark mutated model parameters")
    return report


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def write_bench_report(reports: list[BenchReport], fits: list[ScalingFit], out_dir: str | Path) -> dict[str, Path]:
    """``bench.tsv``, ``scaling.tsv`` and a key=value file ``bench.kv``.

    In the kv file, per-mixer keys are prefixed ``<mixer>.``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"bench": out / "bench.tsv", "scaling": out / "scaling.tsv", "kv": out / "bench.kv"}
    rows = ["\t".join(BENCH_KEYS)] + ["\t".join(_fmt(asdict(r)[k]) for k in BENCH_KEYS) for r in reports]
    paths["bench"].write_text("\n".join(rows) + "\n", encoding="utf-8")
    rows = ["\t".join(FIT_KEYS + SCALING_KEYS[1:])]
    for f in fits:
        for L, s in zip(f.seq_lens, f.seconds):
            rows.append("\t".join(_fmt(v) for v in (f.mixer, f.slope, f.r2, f.reliable, L, s)))
    paths["scaling"].write_text("\n".join(rows) + "\n", encoding="utf-8")
    kv = []
    for r in reports:
        d = asdict(r)
        kv += [f"{r.mixer}.{k}={_fmt(d[k])}" for k in BENCH_KEYS if k != "mixer"]
    for f in fits:
        kv += [f"{f.mixer}.slope={_fmt(f.slope)}", f"{f.mixer}.r2={_fmt(f.r2)}", f"{f.mixer}.reliable={f.reliable}"]
    paths["kv"].write_text("\n".join(kv) + "\n", encoding="utf-8")
    return paths
