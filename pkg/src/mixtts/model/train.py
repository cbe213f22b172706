"""Single-writer training loop: Adam, optional cosine decay, per-epoch history."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..data import Utterance, collate
from .config import ModelConfig
from .network import AcousticModel

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = 200


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    scheduler: str = "cosine"  # or "none"
    batch_size: int = 4
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.scheduler not in ("cosine", "none"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class TrainState:
    model: AcousticModel
    optimizer: torch.optim.Adam
    config: TrainConfig
    steps_per_epoch: int
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    def lr_at(self, step: int) -> float:
        if self.config.scheduler == "none":
            return self.config.lr
        total = max(1, self.steps_per_epoch * self.config.epochs)
        return self.config.lr * 0.5 * (1 + math.cos(math.pi * min(step, total) / total))


def init_train_state(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: list[Utterance],
    mel_mean=None,
    mel_std=None,
) -> TrainState:
    if not dataset:
        raise ValueError("training dataset is empty")
    torch.manual_seed(train_cfg.seed)
    model = AcousticModel(model_cfg)
    if mel_mean is None:
        frames = np.concatenate([u.mel for u in dataset], axis=1)
        mel_mean, mel_std = frames.mean(1), frames.std(1)
    model.set_mel_stats(mel_mean, mel_std)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, foreach=True)
    steps = math.ceil(len(dataset) / train_cfg.batch_size)
    return TrainState(model, opt, train_cfg, steps)


def _epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 1_000_003 + epoch * 7919) % (2**63)


def train_epoch(state: TrainState, dataset: list[Utterance], pad_id: int = 0) -> TrainState:
    """One pass over a shuffled dataset; returns the same (mutated) state."""
    if not dataset:
        raise ValueError("training dataset is empty")
    cfg = state.config
    seed = _epoch_seed(cfg.seed, state.epoch)
    order = np.random.default_rng(seed).permutation(len(dataset))
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    model = state.model
    model.train()
    sums = {"total": 0.0, "cfm": 0.0, "duration": 0.0, "prior": 0.0}
    n_batches = 0
    for start in range(0, len(order), cfg.batch_size):
        items = [dataset[i] for i in order[start : start + cfg.batch_size]]
        batch = collate(items, pad_id)
        lr = state.lr_at(state.step)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        losses = model.loss(batch, gen)
        total = losses["total"]
        if not torch.isfinite(total):
            parts = {k: float(v.detach()) for k, v in losses.items()}
            raise TrainingError(
                f"non-finite loss at epoch {state.epoch + 1} step {state.step}: {parts}; "
                f"utterances {list(batch.keys)}"
            )
        state.optimizer.zero_grad(set_to_none=True)
        total.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        state.optimizer.step()
        # a NaN or inf anywhere survives the per-tensor sums
        if not torch.isfinite(torch.stack([p.detach().sum() for p in model.parameters()])).all():
            raise TrainingError(f"non-finite parameters after step {state.step}")
        state.step += 1
        n_batches += 1
        for k in sums:
            sums[k] += float(losses[k].detach())
    state.epoch += 1
    record = {"epoch": state.epoch, "step": state.step, "lr": lr}
    record.update({k: v / n_batches for k, v in sums.items()})
    state.history.append(record)
    log.info(
        "event=epoch epoch=%d step=%d loss=%.5f cfm=%.5f duration=%.5f prior=%.5f",
        state.epoch, state.step, record["total"], record["cfm"], record["duration"], record["prior"],
    )
    return state
