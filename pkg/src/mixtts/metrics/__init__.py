"""Objective metrics over (reference, synthesized) waveform pairs."""

from .pitch import F0Track, MetricError, PitchConfig, extract_f0, f0_rmse, f1_from_counts, vuv_f1
from .report import MetricReport, PairMetrics, evaluate_testset, write_report
from .spectral import dtw, frechet_distance, las_rmse, mcd, mcd_from_cepstra, mfcc, mfcc_fid
from .stoi import stoi

__all__ = [
    "F0Track",
    "MetricError",
    "MetricReport",
    "PairMetrics",
    "PitchConfig",
    "dtw",
    "evaluate_testset",
    "extract_f0",
    "f0_rmse",
    "f1_from_counts",
    "frechet_distance",
    "las_rmse",
    "mcd",
    "mcd_from_cepstra",
    "mfcc",
    "mfcc_fid",
    "stoi",
    "vuv_f1",
    "write_report",
]
