"""Test-set evaluation and report serialization."""

from __future__ import annotations

import logging
import shutil
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import Waveform, read_wav, resample
from .pitch import MetricError, extract_f0, f0_rmse, vuv_f1
from .spectral import las_rmse, mcd, mfcc_fid
from .stoi import stoi

log = logging.getLogger(__name__)

REPORT_KEYS = ("f0_rmse", "las_rmse", "mcd", "stoi", "vuv_f1", "mfcc_fid")


@dataclass
class PairMetrics:
    key: str
    f0_rmse: float | None  # None when the pair has no co-voiced frames
    las_rmse: float
    mcd: float
    stoi: float
    vuv_f1: float


@dataclass
class MetricReport:
    f0_rmse: float
    las_rmse: float
    mcd: float
    stoi: float
    vuv_f1: float
    mfcc_fid: float
    n_pairs: int
    pairs: list[PairMetrics] = field(default_factory=list, repr=False)

    def summary(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in REPORT_KEYS} | {"n_pairs": self.n_pairs}


def pair_metrics(key: str, ref: Waveform, syn: Waveform) -> PairMetrics:
    if syn.sample_rate != ref.sample_rate:
        syn = resample(syn, ref.sample_rate)
    ta, tb = extract_f0(ref), extract_f0(syn)
    try:
        f0 = f0_rmse(ta, tb)
    except MetricError:
        f0 = None
    return PairMetrics(key, f0, las_rmse(ref, syn), mcd(ref, syn), stoi(ref, syn), vuv_f1(ta, tb))


def manifest_audio_paths(path: str | Path) -> list[Path]:
    """First column of a manifest, resolved against the manifest's directory."""
    path = Path(path)
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        p = Path(line.split("\t", 1)[0])
        out.append(p if p.is_absolute() else path.parent / p)
    return out


def evaluate_testset(ref_manifest: str | Path, syn_dir: str | Path) -> MetricReport:
    """Pairs each reference with ``syn_dir/<basename>``; averages per-pair metrics."""
    refs = manifest_audio_paths(ref_manifest)
    if not refs:
        raise MetricError(f"{ref_manifest}: no references listed")
    syn_dir = Path(syn_dir)
    missing = [p.name for p in refs if not (syn_dir / p.name).exists()]
    if missing:
        raise MetricError(f"no synthesized counterpart for {missing[0]} in {syn_dir}")
    ref_w, syn_w, pairs = [], [], []
    for p in refs:
        a, b = read_wav(p), read_wav(syn_dir / p.name)
        ref_w.append(a)
        syn_w.append(b)
        pairs.append(pair_metrics(p.stem, a, b))
    f0 = [m.f0_rmse for m in pairs if m.f0_rmse is not None]
    if not f0:
        raise MetricError("no pair has frames voiced in both reference and synthesis")
    if len(f0) < len(pairs):
        log.warning("event=f0_skipped pairs=%d reason=no_covoiced_frames", len(pairs) - len(f0))
    mean = lambda name: float(np.mean([getattr(m, name) for m in pairs]))
    return MetricReport(
        f0_rmse=float(np.mean(f0)),
        las_rmse=mean("las_rmse"),
        mcd=mean("mcd"),
        stoi=mean("stoi"),
        vuv_f1=mean("vuv_f1"),
        mfcc_fid=mfcc_fid(ref_w, syn_w) if len(refs) >= 2 else float("nan"),
        n_pairs=len(pairs),
        pairs=pairs,
    )


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.6g}" if isinstance(v, float) else str(v)


def write_report(report: MetricReport, out_dir: str | Path) -> dict[str, Path]:
    """``metrics.tsv`` (one row per pair plus a mean row) and ``metrics.kv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["key", "f0_rmse", "las_rmse", "mcd", "stoi", "vuv_f1"]
    rows = ["\t".join(cols)]
    for m in report.pairs:
        d = asdict(m)
        rows.append("\t".join(_fmt(d[c]) for c in cols))
    rows.append("\t".join(["MEAN"] + [_fmt(getattr(report, c)) for c in cols[1:]]))
    tsv = out / "metrics.tsv"
    tsv.write_text("\n".join(rows) + "\n", encoding="utf-8")
    kv = out / "metrics.kv"
    kv.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in report.summary().items()), encoding="utf-8")
    return {"tsv": tsv, "kv": kv}


def pesq_external(binary: str, ref_path: str | Path, deg_path: str | Path, rate: int = 16000) -> float:
    """Runs a user-supplied PESQ binary and parses the last number it prints."""
    exe = shutil.which(binary) or binary
    if not Path(exe).exists():
        raise MetricError(f"PESQ binary not found: {binary}")
    proc = subprocess.run([exe, f"+{rate}", str(ref_path), str(deg_path)], capture_output=True, text=True)
    numbers = []
    for tok in proc.stdout.replace("=", " ").split():
        try:
            numbers.append(float(tok))
        except ValueError:
            pass
    if proc.returncode != 0 or not numbers:
        raise MetricError(f"PESQ binary failed (exit {proc.returncode}): {proc.stderr.strip()[:200]}")
    return numbers[-1]
