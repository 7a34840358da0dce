"""Named experiment presets.

"desk" is sized for a laptop-class CPU: short horizon, narrow funnel
widths, 10 supervised epochs.  "paper" carries the full-scale settings
(100 epochs, T=128, the wide teacher funnel, per-dataset best windows for
the sliding order-1 loss).  Either preset only fills defaults; explicit
config keys and CLI flags override individual values.
"""

from __future__ import annotations

from .errors import ConfigError

INPUT_DIMS = {"mnist": 784, "fashion-mnist": 784, "cifar10": 1024}

# Best sliding windows per dataset at order m=1 (full-scale sweeps).
PAPER_BEST_DELTA = {"mnist": 128, "fashion-mnist": 32, "cifar10": 96}

_COMMON = {
    "batch_size": 128,
    "lr": 1e-2,
    "seed": 0,
    "lambda": 0.9,
    "tau": 1.0,
    "tau_p": 1.5,
    "alpha": 0.2,
    "beta": 0.2,
    "gamma": 0.6,
    "stride": 1,
    "m": 1,
}

_DESK = {
    **_COMMON,
    "t": 16,
    "epochs": 10,
    "distill_epochs": 8,
    "delta": 8,
    "teacher_hidden": (256, 128, 64, 32, 16),
    "ta_hidden": (128, 64, 32),
    "student_hidden": (100,),
}

_PAPER = {
    **_COMMON,
    "t": 128,
    "epochs": 100,
    "distill_epochs": 100,
    "teacher_hidden": (400, 300, 200, 100, 50),
    "ta_hidden": (300, 150, 50),
    "student_hidden": (100,),
}


def preset(name: str, dataset: str) -> dict:
    if dataset not in INPUT_DIMS:
        raise ConfigError(f"unknown dataset {dataset!r}, expected one of {sorted(INPUT_DIMS)}")
    if name == "desk":
        return dict(_DESK)
    if name == "paper":
        values = dict(_PAPER)
        values["delta"] = PAPER_BEST_DELTA[dataset]
        return values
    raise ConfigError(f"unknown preset {name!r}, expected desk or paper")
