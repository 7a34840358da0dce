"""Supervised training, distillation epochs and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, no_grad
from .data import ImageDataset, batches
from .errors import ConfigError, ShapeError, TrainingError
from .losses import DistillLossConfig, combined_loss, nll_loss
from .network import NeuronConfig, SpikingNetwork, classify_logits
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-2
    seed: int = 0
    timesteps: int = 128
    neuron: NeuronConfig = field(default_factory=NeuronConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (batch norm), got {self.batch_size}")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy must lie in [0, 1], got {self.accuracy}")


def _predictions(sat_data: np.ndarray) -> np.ndarray:
    """Argmax class per batch element from a [t, c, b] array; ties pick the lowest index."""
    return sat_data.mean(axis=0).argmax(axis=0)


def train_supervised_epoch(net: SpikingNetwork, dataset: ImageDataset, cfg: TrainConfig,
                           opt: Adam, epoch: int = 0) -> MetricsRecord:
    """One shuffled pass of negative log-likelihood training."""
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    total_loss = 0.0
    correct = 0
    seen = 0
    for index, batch in enumerate(batches(dataset, cfg.batch_size, cfg.timesteps,
                                          seed=cfg.seed, shuffle=True, train=True, epoch=epoch)):
        tape = Tape()
        with tape:
            net.reset_state()
            sat = net.forward(batch.data, train=True)
            logits = classify_logits(sat)
            loss = nll_loss(logits, batch.labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {index}")
        ad.backward(tape, loss)
        opt.step()
        total_loss += value * batch.size
        correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
        seen += batch.size
    if seen == 0:
        raise ConfigError(f"batch_size {cfg.batch_size} leaves no full train batches")
    return MetricsRecord(epoch, "train", total_loss / seen, correct / seen)


def distill_epoch(teacher: SpikingNetwork, student: SpikingNetwork, dataset: ImageDataset,
                  cfg: TrainConfig, loss_cfg: DistillLossConfig, opt: Adam,
                  epoch: int = 0) -> MetricsRecord:
    """One epoch of activation-tensor distillation from a frozen teacher.

    The teacher runs in eval mode under no_grad, so its parameters and batch
    norm statistics never change.  Labels contribute nothing to the gradient;
    the returned accuracy is diagnostic only.
    """
    if teacher.spec.input_dim != student.spec.input_dim:
        raise ShapeError(f"teacher input {teacher.spec.input_dim} vs student {student.spec.input_dim}")
    if teacher.timesteps != student.timesteps:
        raise ShapeError(f"teacher T {teacher.timesteps} vs student T {student.timesteps}")
    if teacher.num_classes != student.num_classes:
        raise ShapeError(f"teacher classes {teacher.num_classes} vs student {student.num_classes}")
    total_loss = 0.0
    correct = 0
    seen = 0
    for index, batch in enumerate(batches(dataset, cfg.batch_size, cfg.timesteps,
                                          seed=cfg.seed, shuffle=True, train=True, epoch=epoch)):
        with no_grad():
            teacher.reset_state()
            sat_t = teacher.forward(batch.data, train=False)
        tape = Tape()
        with tape:
            student.reset_state()
            sat_s = student.forward(batch.data, train=True)
            loss = combined_loss(sat_t, sat_s, loss_cfg)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite distillation loss at epoch {epoch}, batch {index}")
        ad.backward(tape, loss)
        opt.step()
        total_loss += value * batch.size
        correct += int((_predictions(sat_s.data) == batch.labels).sum())
        seen += batch.size
    if seen == 0:
        raise ConfigError(f"batch_size {cfg.batch_size} leaves no full train batches")
    return MetricsRecord(epoch, "train", total_loss / seen, correct / seen)


def evaluate_metrics(net: SpikingNetwork, dataset: ImageDataset, epoch: int = 0,
                     batch_size: int = 256) -> MetricsRecord:
    """Eval-mode loss and accuracy over the whole dataset."""
    total_loss = 0.0
    correct = 0
    seen = 0
    with no_grad():
        for batch in batches(dataset, batch_size, net.timesteps, shuffle=False, train=False):
            net.reset_state()
            sat = net.forward(batch.data, train=False)
            logits = classify_logits(sat)
            total_loss += float(nll_loss(logits, batch.labels).data) * batch.size
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            seen += batch.size
    net.reset_state()
    return MetricsRecord(epoch, "test", total_loss / seen, correct / seen)


def evaluate(net: SpikingNetwork, dataset: ImageDataset, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax class matches the label."""
    return evaluate_metrics(net, dataset, batch_size=batch_size).accuracy
