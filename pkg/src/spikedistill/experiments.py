"""Multi-run procedures: distillation loops, the teacher-assistant pipeline,
loss-weight grid search and window sweeps.

Sweep points are independent; with jobs > 1 they run in separate processes
and the merged output is sorted on the sweep key, so results do not depend
on completion order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import ImageDataset
from .errors import ConfigError, SpikeDistillError
from .losses import DistillLossConfig, sliding_lm_loss
from .network import NetworkSpec, SpikingNetwork
from .optim import Adam
from .training import MetricsRecord, TrainConfig, distill_epoch, evaluate, evaluate_metrics


def train_model(net: SpikingNetwork, train_set: ImageDataset, test_set: ImageDataset | None,
                cfg: TrainConfig, progress=None):
    """Supervised training for cfg.epochs; returns interleaved train/test records."""
    from .training import train_supervised_epoch

    opt = Adam(net.parameters(), lr=cfg.lr)
    records = []
    for epoch in range(cfg.epochs):
        records.append(train_supervised_epoch(net, train_set, cfg, opt, epoch))
        if test_set is not None:
            records.append(evaluate_metrics(net, test_set, epoch))
        if progress:
            progress(records)
    return records


def distill_model(teacher: SpikingNetwork, student: SpikingNetwork, train_set: ImageDataset,
                  test_set: ImageDataset | None, cfg: TrainConfig, loss_cfg: DistillLossConfig,
                  progress=None):
    """Distillation for cfg.epochs; returns interleaved train/test records."""
    opt = Adam(student.parameters(), lr=cfg.lr)
    records = []
    for epoch in range(cfg.epochs):
        records.append(distill_epoch(teacher, student, train_set, cfg, loss_cfg, opt, epoch))
        if test_set is not None:
            records.append(evaluate_metrics(student, test_set, epoch))
        if progress:
            progress(records)
    return records


def multistage_pipeline(teacher_ckpt, ta_spec: NetworkSpec, student_spec: NetworkSpec,
                        train_set: ImageDataset, test_set: ImageDataset | None,
                        cfg: TrainConfig, loss_cfg: DistillLossConfig, out_dir,
                        progress=None):
    """Teacher -> TA -> student distillation with persisted artifacts.

    Stage 1 distills the checkpointed teacher into a fresh TA and saves it;
    stage 2 freezes the TA and distills the student.  A stage failure aborts
    with the stage name while earlier artifacts stay on disk.  Returns
    (ta_path, student_path, {stage: records}).
    """
    from .store import load_checkpoint, save_checkpoint, write_metrics

    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    metrics_dir = out_dir / "metrics"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_dir.mkdir(parents=True, exist_ok=True)

    teacher, _ = load_checkpoint(teacher_ckpt)
    metrics = {}

    try:
        ta = SpikingNetwork(ta_spec, seed=cfg.seed)
        metrics["stage1_ta"] = distill_model(teacher, ta, train_set, test_set, cfg, loss_cfg, progress)
        ta_path = ckpt_dir / "ta.ckpt"
        save_checkpoint(ta, ta_path, seed=cfg.seed, epoch=cfg.epochs - 1)
        write_metrics(metrics["stage1_ta"], metrics_dir / "stage1_ta.csv")
    except SpikeDistillError as e:
        e.args = (f"stage 1 (teacher -> ta): {e}",)
        raise

    try:
        student = SpikingNetwork(student_spec, seed=cfg.seed)
        metrics["stage2_student"] = distill_model(ta, student, train_set, test_set, cfg, loss_cfg, progress)
        student_path = ckpt_dir / "student.ckpt"
        save_checkpoint(student, student_path, seed=cfg.seed, epoch=cfg.epochs - 1)
        write_metrics(metrics["stage2_student"], metrics_dir / "stage2_student.csv")
    except SpikeDistillError as e:
        e.args = (f"stage 2 (ta -> student): {e}",)
        raise

    return ta_path, student_path, metrics


def simplex_grid(step: float):
    """All (alpha, beta, gamma) with positive entries on the step lattice summing to 1."""
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9 or n < 1:
        raise ConfigError(f"grid step must divide 1, got {step}")
    points = [(a / n, b / n, (n - a - b) / n)
              for a in range(1, n) for b in range(1, n - a)]
    if not points:
        raise ConfigError(f"grid step {step} admits no interior simplex points")
    return points


def _carve_validation(dataset: ImageDataset, subset_fraction: float, val_fraction: float, seed: int):
    """Disjoint (train subset, validation) carved from one dataset."""
    n = len(dataset)
    perm = np.random.default_rng([seed, 0x5B17]).permutation(n)
    n_train = max(1, int(n * subset_fraction))
    n_val = max(1, int(n * val_fraction))
    if n_train + n_val > n:
        raise ConfigError(f"subset {subset_fraction} plus validation {val_fraction} exceeds the dataset")
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:n_train + n_val])


def _grid_point(args):
    alpha, beta, gamma, teacher_ckpt, student_spec, train_sub, val_set, cfg, base = args
    from .store import load_checkpoint

    teacher, _ = load_checkpoint(teacher_ckpt)
    loss_cfg = DistillLossConfig(alpha, beta, gamma, base.delta, base.m_sliding,
                                 base.stride, base.kl_direction)
    student = SpikingNetwork(student_spec, seed=cfg.seed)
    distill_model(teacher, student, train_sub, None, cfg, loss_cfg)
    return alpha, beta, gamma, evaluate(student, val_set)


def grid_search_weights(teacher_ckpt, student_spec: NetworkSpec, dataset: ImageDataset,
                        base_cfg: DistillLossConfig, cfg: TrainConfig, step: float = 0.1,
                        subset_fraction: float = 0.2, val_fraction: float = 0.1,
                        jobs: int = 1, csv_path=None):
    """Short-budget distillation per simplex point; returns (best config, rows).

    Each point trains on the same seeded subset and is scored on a held-out
    validation slice of the training data.  Rows are (alpha, beta, gamma,
    accuracy) sorted on the weights; the best point maximizes accuracy with
    the lexicographically smallest weights breaking ties.
    """
    points = simplex_grid(step)
    train_sub, val_set = _carve_validation(dataset, subset_fraction, val_fraction, cfg.seed)
    tasks = [(a, b, g, teacher_ckpt, student_spec, train_sub, val_set, cfg, base_cfg)
             for a, b, g in sorted(points)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_grid_point, tasks))
    else:
        rows = [_grid_point(t) for t in tasks]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    if csv_path is not None:
        lines = ["alpha,beta,gamma,accuracy"]
        lines += [f"{a:.6f},{b:.6f},{g:.6f},{acc:.6f}" for a, b, g, acc in rows]
        Path(csv_path).write_text("\n".join(lines) + "\n")
    best = max(rows, key=lambda r: (r[3], (-r[0], -r[1], -r[2])))
    best_cfg = DistillLossConfig(best[0], best[1], best[2], base_cfg.delta,
                                 base_cfg.m_sliding, base_cfg.stride, base_cfg.kl_direction)
    return best_cfg, rows


def _sliding_only_epochs(teacher, student, train_set, cfg, delta, m, stride):
    from . import autodiff as ad
    from .autodiff import Tape, no_grad
    from .data import batches
    from .errors import TrainingError

    opt = Adam(student.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        for index, batch in enumerate(batches(train_set, cfg.batch_size, cfg.timesteps,
                                              seed=cfg.seed, shuffle=True, train=True, epoch=epoch)):
            with no_grad():
                teacher.reset_state()
                sat_t = teacher.forward(batch.data, train=False)
            tape = Tape()
            with tape:
                student.reset_state()
                sat_s = student.forward(batch.data, train=True)
                loss = sliding_lm_loss(sat_t, sat_s, delta, m, stride)
            if not np.isfinite(float(loss.data)):
                raise TrainingError(f"non-finite sweep loss at epoch {epoch}, batch {index}")
            ad.backward(tape, loss)
            opt.step()


def _window_point(args):
    delta, m, seed, teacher_ckpt, student_spec, train_set, test_set, cfg, stride = args
    from dataclasses import replace
    from .store import load_checkpoint

    teacher, _ = load_checkpoint(teacher_ckpt)
    run_cfg = replace(cfg, seed=seed)
    student = SpikingNetwork(student_spec, seed=seed)
    _sliding_only_epochs(teacher, student, train_set, run_cfg, delta, m, stride)
    return delta, m, seed, evaluate(student, test_set)


def window_sweep(teacher_ckpt, student_spec: NetworkSpec, train_set: ImageDataset,
                 test_set: ImageDataset, deltas, m: int, cfg: TrainConfig,
                 seeds=(0,), stride: int = 1, jobs: int = 1, csv_path=None):
    """Distill once per (delta, seed) with only the sliding loss active.

    Returns rows (delta, m, seed, accuracy) sorted on (delta, seed).
    """
    deltas = [int(d) for d in deltas]
    for d in deltas:
        if not 1 <= d <= cfg.timesteps:
            raise ConfigError(f"window length {d} exceeds timesteps {cfg.timesteps}")
    if m not in (1, 2):
        raise ConfigError(f"norm order must be 1 or 2, got {m}")
    tasks = [(d, m, s, teacher_ckpt, student_spec, train_set, test_set, cfg, stride)
             for d in sorted(deltas) for s in sorted(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_window_point, tasks))
    else:
        rows = [_window_point(t) for t in tasks]
    rows.sort(key=lambda r: (r[0], r[2]))
    if csv_path is not None:
        lines = ["delta,m,seed,accuracy"]
        lines += [f"{d},{mm},{s},{acc:.6f}" for d, mm, s, acc in rows]
        Path(csv_path).write_text("\n".join(lines) + "\n")
    return rows
