"""``mixtts`` command line: prepare, train, synth, eval, bench."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import COMMANDS, ConfigError, RunConfig, load_config_file, parse_config

log = logging.getLogger("mixtts")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="model checkpoint file")
    common.add_argument("--mixer", choices=["attention", "mamba2", "hydra", "fnet"])
    common.add_argument("--desk-scale", action="store_true", default=None, help="shrunk CPU-sized model")
    common.add_argument("--threads", type=int)

    parser = argparse.ArgumentParser(prog="mixtts", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mixtts {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="tokenize, extract mels, oversample")
    p.add_argument("--manifest")
    p.add_argument("--registry")
    p.add_argument("--synthetic-corpus", action="store_true", default=None, help="generate the bundled toy corpus first")

    p = sub.add_parser("train", parents=[common], help="train an acoustic model")
    p.add_argument("--data", help="directory written by 'prepare'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--attention-low-lr", action="store_true", default=None, help="attention: lr 1e-6 without scheduler")

    p = sub.add_parser("synth", parents=[common], help="synthesize one WAV + mel per input line")
    p.add_argument("--text", help="lines of 'speaker<TAB>language<TAB>text' or bare text")
    p.add_argument("--speaker")
    p.add_argument("--language")
    p.add_argument("--n-steps", type=int)

    p = sub.add_parser("eval", parents=[common], help="objective metrics against references")
    p.add_argument("--manifest", help="reference manifest")
    p.add_argument("--syn-dir", help="directory of synthesized WAVs named like the references")
    p.add_argument("--pesq-binary", help="external PESQ executable (optional)")

    p = sub.add_parser("bench", parents=[common], help="throughput, RTF, memory and scaling")
    p.add_argument("--bench-tokens", type=int)
    p.add_argument("--bench-repeats", type=int)
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    return parser


def _setup_logging() -> None:
    root = logging.getLogger()
    if not any(getattr(h, "_mixtts", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("level=%(levelname)s %(message)s"))
        handler._mixtts = True
        root.addHandler(handler)
    root.setLevel(logging.INFO)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def resolve(argv: list[str] | None = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    file_values = load_config_file(args.pop("config")) if args.get("config") else {}
    args.pop("config", None)
    return parse_config(command, file_values, args)


def write_record(cfg: RunConfig, out: Path, extra: dict | None = None) -> Path:
    """Reproducibility record: resolved config, seed, environment, content hashes."""
    from .model.checkpoint import content_hash

    record = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "versions": {"mixtts": __version__, "torch": torch.__version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "threads": torch.get_num_threads(),
    }
    if cfg.checkpoint and Path(cfg.checkpoint).exists():
        record["checkpoint_hash"] = content_hash(cfg.checkpoint)
    record.update(extra or {})
    path = out / "repro.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("event=record path=%s", path)
    return path


# -- commands ------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig, out: Path) -> dict:
    from .corpus import make_synthetic_corpus
    from .data import prepare_corpus

    manifest, registry = cfg.manifest, cfg.registry
    if cfg.synthetic_corpus:
        paths = make_synthetic_corpus(out / "corpus", seed=cfg.seed)
        manifest, registry = paths["manifest"], paths["registry"]
        log.info("event=synthetic_corpus manifest=%s", manifest)
    summary = prepare_corpus(manifest, registry, out)
    log.info("event=prepared %s", " ".join(f"{k}={v}" for k, v in summary.items()))
    return {"manifest": str(manifest)}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    from .data import load_prepared
    from .model.checkpoint import content_hash, save_checkpoint
    from .model.train import TrainConfig, init_train_state, train_epoch

    corpus = load_prepared(cfg.data)
    model_cfg = cfg.model_config(
        n_vocab=corpus.vocab.size, n_speakers=corpus.registry.n_speakers, n_languages=corpus.registry.n_languages
    )
    lr, scheduler = cfg.effective_lr()
    train_cfg = TrainConfig(lr=lr, scheduler=scheduler, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed)
    state = init_train_state(model_cfg, train_cfg, corpus.utterances, corpus.mel_mean, corpus.mel_std)
    log.info("event=train_start mixer=%s params=%d items=%d lr=%g scheduler=%s",
             model_cfg.mixer.value, sum(p.numel() for p in state.model.parameters()),
             len(corpus.utterances), lr, scheduler)
    meta = {"vocab": corpus.vocab.to_dict(), "registry": corpus.registry.to_dict(),
            "train": {"lr": lr, "scheduler": scheduler, "batch_size": cfg.batch_size, "seed": cfg.seed}}
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for _ in range(cfg.epochs):
        train_epoch(state, corpus.utterances, corpus.vocab.pad_id)
        if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
            path = ckpt_dir / f"epoch_{state.epoch:04d}.ckpt"
            save_checkpoint(path, state.model, meta | {"epoch": state.epoch}, state.optimizer)
            log.info("event=checkpoint epoch=%d path=%s hash=%s", state.epoch, path, content_hash(path))
    final = out / "model.ckpt"
    save_checkpoint(final, state.model, meta | {"epoch": state.epoch}, state.optimizer)
    wall = time.perf_counter() - t0
    cols = ["epoch", "step", "lr", "total", "cfm", "duration", "prior"]
    rows = ["\t".join(cols)] + ["\t".join(f"{h[c]:.6g}" for c in cols) for h in state.history]
    (out / "history.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    first, last = state.history[0]["total"], state.history[-1]["total"]
    (out / "train.kv").write_text(
        f"mixer={model_cfg.mixer.value}\nepochs={state.epoch}\nfirst_loss={first:.6g}\n"
        f"final_loss={last:.6g}\nloss_ratio={last / first:.6g}\nwall_seconds={wall:.3f}\n",
        encoding="utf-8",
    )
    if cfg.figures:
        from .plotting import plot_loss

        plot_loss(state.history, out / "loss.png")
    digest = content_hash(final)
    log.info("event=train_done checkpoint=%s hash=%s loss_ratio=%.4f wall_s=%.1f", final, digest, last / first, wall)
    return {"checkpoint_hash": digest, "checkpoint_path": str(final)}


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    from .model.checkpoint import load_checkpoint
    from .synth import SynthRequest, parse_requests, synthesize, write_result
    from .text import CharVocab, registry_from_dict

    model, meta, _ = load_checkpoint(cfg.checkpoint)
    vocab = CharVocab.from_dict(meta["vocab"])
    registry = registry_from_dict(meta["registry"])
    lines = Path(cfg.text).read_text(encoding="utf-8").splitlines()
    requests = parse_requests(lines, cfg.speaker, cfg.language)
    written = []
    for i, req in enumerate(requests):
        try:
            result = synthesize(model, req, vocab, registry, seed=cfg.seed + i, n_steps=cfg.n_steps,
                                gl_iterations=cfg.gl_iterations)
        except (KeyError, ValueError) as exc:
            raise RuntimeError(f"line {i + 1} ({req.speaker}, {req.language}): {exc}") from exc
        paths = write_result(result, out, f"{i:04d}")
        if cfg.figures:
            from .plotting import plot_mel

            plot_mel(result.mel.values, out / f"{i:04d}.png", req.text)
        log.info("event=synth line=%d frames=%d wav=%s", i, result.mel.n_frames, paths.get("wav"))
        written.append(paths["wav"].name)
    return {"outputs": written}


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    from .metrics import evaluate_testset, write_report
    from .metrics.report import manifest_audio_paths, pesq_external

    report = evaluate_testset(cfg.manifest, cfg.syn_dir)
    paths = write_report(report, out)
    extra = {}
    if cfg.pesq_binary:
        refs = manifest_audio_paths(cfg.manifest)
        scores = [pesq_external(cfg.pesq_binary, p, Path(cfg.syn_dir) / p.name) for p in refs]
        extra["pesq"] = float(np.mean(scores))
        with paths["kv"].open("a", encoding="utf-8") as fh:
            fh.write(f"pesq={extra['pesq']:.6g}\n")
    if cfg.figures:
        from .plotting import plot_metrics

        plot_metrics(report, out / "metrics.png")
    log.info("event=eval %s", " ".join(f"{k}={v:.6g}" for k, v in report.summary().items()))
    return extra


def cmd_bench(cfg: RunConfig, out: Path) -> dict:
    from .bench import measure_peak_memory, run_bench, scaling_report, write_bench_report
    from .model.checkpoint import load_checkpoint
    from .model.config import ModelConfig
    from .model.network import AcousticModel

    reports = []
    if cfg.checkpoint:
        model, _, _ = load_checkpoint(cfg.checkpoint)
        models = [model]
    else:
        models = []
        for kind in cfg.bench_mixers:
            torch.manual_seed(cfg.seed)
            mc = ModelConfig.from_dict({"desk_scale": cfg.desk_scale} | dict(cfg.model) | {"mixer": kind})
            models.append(AcousticModel(mc).eval())
    for model in models:
        for b in cfg.bench_batches:
            r = run_bench(model, b, cfg.bench_tokens, cfg.bench_repeats, cfg.n_steps, cfg.seed)
            log.info("event=bench mixer=%s batch=%d throughput_ups=%.4g rtf=%.4g peak_bytes=%d",
                     r.mixer, r.batch, r.throughput_ups, r.rtf, r.peak_bytes)
            reports.append(r)
    fits = scaling_report(cfg.bench_mixers, cfg.scaling_lens, repeats=cfg.bench_repeats, seed=cfg.seed)
    for f in fits:
        log.info("event=scaling mixer=%s slope=%.3f r2=%.3f reliable=%s", f.mixer, f.slope, f.r2, f.reliable)
    write_bench_report(reports, fits, out)
    if cfg.figures:
        from .plotting import plot_memory, plot_scaling

        plot_scaling(fits, out / "scaling.png")
        plot_memory(reports, out / "memory.png")
    return {}


HANDLERS = {"prepare": cmd_prepare, "train": cmd_train, "synth": cmd_synth, "eval": cmd_eval, "bench": cmd_bench}
assert set(HANDLERS) == set(COMMANDS)


def dispatch(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    try:
        extra = HANDLERS[cfg.command](cfg, out)
    except Exception as exc:  # noqa: BLE001 - reported with context, then nonzero exit
        log.error("event=failed command=%s error=%s: %s", cfg.command, type(exc).__name__, exc)
        return 1
    write_record(cfg, out, extra)
    log.info("event=done command=%s out=%s", cfg.command, out)
    return 0


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    try:
        cfg = resolve(argv)
    except ConfigError as exc:
        log.error("event=config_error error=%s", exc)
        return 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
