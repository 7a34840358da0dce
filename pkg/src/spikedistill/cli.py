"""Command-line entry point.

Subcommands: train, distill, pipeline, eval, sweep, features.  Settings are
resolved in layers: preset defaults, then a key=value config file, then a
loss-config file, then explicit flags.  Every resolved value is echoed to
<out>/resolved-config.txt so a run can be reproduced from its output
directory alone.

Exit codes: 0 success; 1 configuration or architecture error; 2 data or
checkpoint error; 3 numeric or training error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from pathlib import Path

from .data import ImageDataset, load_cifar10, load_idx
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    StateError,
    TrainingError,
)
from .experiments import distill_model, grid_search_weights, multistage_pipeline, train_model, window_sweep
from .losses import DistillLossConfig
from .network import NetworkSpec, NeuronConfig, SpikingNetwork
from .presets import INPUT_DIMS, preset
from .store import export_features, load_checkpoint, save_checkpoint, write_metrics
from .training import TrainConfig, evaluate

DATA_DIR_ENV = "SPIKEDISTILL_DATA_DIR"

# key -> parser; the sole registry of config keys, file and flags alike.
_KEY_PARSERS = {
    "dataset": str,
    "data_dir": str,
    "role": str,
    "widths": lambda s: tuple(int(x) for x in str(s).split(",")),
    "teacher_hidden": lambda s: tuple(int(x) for x in str(s).split(",")),
    "ta_hidden": lambda s: tuple(int(x) for x in str(s).split(",")),
    "student_hidden": lambda s: tuple(int(x) for x in str(s).split(",")),
    "t": int,
    "lambda": float,
    "tau": float,
    "tau_p": float,
    "epochs": int,
    "distill_epochs": int,
    "batch_size": int,
    "lr": float,
    "seed": int,
    "alpha": float,
    "beta": float,
    "gamma": float,
    "delta": int,
    "stride": int,
    "m": int,
    "kl_direction": str,
    "subset_fraction": float,
    "val_fraction": float,
    "out_dir": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors, exit 1
        raise ConfigError(message)


def _parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEY_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _KEY_PARSERS[key](value.strip())
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


class RunConfig:
    """Layered key=value settings with provenance tracking."""

    def __init__(self, preset_name: str, dataset: str):
        self.values = preset(preset_name, dataset)
        self.values["dataset"] = dataset
        self.values["preset"] = preset_name
        self.explicit = set()

    def merge_file(self, path):
        for key, value in _parse_config_file(path).items():
            self.values[key] = value
            self.explicit.add(key)

    def merge_flags(self, args, mapping):
        for flag, key in mapping.items():
            value = getattr(args, flag, None)
            if value is not None:
                self.values[key] = _KEY_PARSERS.get(key, str)(value)
                self.explicit.add(key)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def is_explicit(self, key) -> bool:
        return key in self.explicit

    def echo(self, path):
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

    def neuron(self) -> NeuronConfig:
        return NeuronConfig(self.values["tau"], self.values["tau_p"], self.values["lambda"])

    def train_config(self, epochs_key="epochs") -> TrainConfig:
        return TrainConfig(
            epochs=self.values[epochs_key],
            batch_size=self.values["batch_size"],
            lr=self.values["lr"],
            seed=self.values["seed"],
            timesteps=self.values["t"],
            neuron=self.neuron(),
        )

    def loss_config(self) -> DistillLossConfig:
        return DistillLossConfig(
            alpha=self.values["alpha"],
            beta=self.values["beta"],
            gamma=self.values["gamma"],
            delta=self.values["delta"],
            m_sliding=self.values["m"],
            stride=self.values["stride"],
            kl_direction=self.values.get("kl_direction", "student"),
        )


def _resolve_data_dir(cfg: RunConfig) -> Path:
    data_dir = cfg.get("data_dir") or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ConfigError(f"no data directory: pass --data-dir or set {DATA_DIR_ENV}")
    path = Path(data_dir)
    if not path.is_dir():
        raise DataError(f"data directory does not exist: {path}")
    return path


def _find_file(candidates):
    for c in candidates:
        if c.exists():
            return c
    raise DataError("missing data file, looked for:\n  " + "\n  ".join(str(c) for c in candidates))


def _idx_pair(roots, images_name, labels_name):
    images = _find_file([r / n for r in roots for n in (images_name, images_name + ".gz")])
    labels = _find_file([r / n for r in roots for n in (labels_name, labels_name + ".gz")])
    return images, labels


def load_dataset(name: str, data_dir: Path, split: str) -> ImageDataset:
    """Load a named dataset split from the standard file layout."""
    if name not in INPUT_DIMS:
        raise ConfigError(f"unknown dataset {name!r}, expected one of {sorted(INPUT_DIMS)}")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    roots = [data_dir / name, data_dir]
    if name == "cifar10":
        roots.insert(1, data_dir / "cifar-10-batches-bin")
        if split == "train":
            files = [_find_file([r / f"data_batch_{i}.bin" for r in roots]) for i in range(1, 6)]
        else:
            files = [_find_file([r / "test_batch.bin" for r in roots])]
        return load_cifar10(files, split)
    prefix = "train" if split == "train" else "t10k"
    images, labels = _idx_pair(roots, f"{prefix}-images-idx3-ubyte", f"{prefix}-labels-idx1-ubyte")
    return load_idx(images, labels, split)


def _prepare_out_dir(cfg: RunConfig, force: bool) -> Path:
    out = Path(cfg.get("out_dir") or "run")
    marker = out / "resolved-config.txt"
    if marker.exists() and not force:
        raise ConfigError(f"output directory {out} already holds a run; pass --force to overwrite")
    for sub in ("checkpoints", "metrics", "config"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg.echo(marker)
    return out


def _copy_config(out: Path, *paths):
    for p in paths:
        if p:
            shutil.copy(p, out / "config" / Path(p).name)


def _progress_printer(label):
    def progress(records):
        latest = records[-1]
        print(f"{label} epoch {latest.epoch} [{latest.split}] "
              f"loss={latest.loss:.6f} accuracy={latest.accuracy:.6f}")
    return progress


def _add_common(p, with_out=True):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", default="desk", choices=["desk", "paper"])
    p.add_argument("--dataset", default="mnist", choices=sorted(INPUT_DIMS))
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--t", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-p", dest="tau_p", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    if with_out:
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--force", action="store_true")


_COMMON_FLAGS = {
    "dataset": "dataset", "data_dir": "data_dir", "t": "t", "lambda_": "lambda",
    "tau": "tau", "tau_p": "tau_p", "epochs": "epochs", "batch_size": "batch_size",
    "lr": "lr", "seed": "seed", "out_dir": "out_dir",
}

_LOSS_FLAGS = {
    "alpha": "alpha", "beta": "beta", "gamma": "gamma", "delta": "delta",
    "stride": "stride", "m": "m", "kl_direction": "kl_direction",
}


def _resolve(args, extra_flags=None) -> RunConfig:
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    loss_values = _parse_config_file(args.loss_config) if getattr(args, "loss_config", None) else {}
    dataset = args.dataset or file_values.get("dataset") or "mnist"
    cfg = RunConfig(args.preset, dataset)
    for values in (file_values, loss_values):
        for key, value in values.items():
            cfg.values[key] = value
            cfg.explicit.add(key)
    cfg.merge_flags(args, _COMMON_FLAGS)
    if extra_flags:
        cfg.merge_flags(args, extra_flags)
    return cfg


def _check_teacher_compat(cfg: RunConfig, teacher: SpikingNetwork):
    if cfg.is_explicit("t") and cfg["t"] != teacher.timesteps:
        raise ShapeError(f"config T {cfg['t']} is incompatible with teacher T {teacher.timesteps}")
    if INPUT_DIMS[cfg["dataset"]] != teacher.spec.input_dim:
        raise ShapeError(f"dataset {cfg['dataset']} has input dim {INPUT_DIMS[cfg['dataset']]}"
                         f" but the teacher expects {teacher.spec.input_dim}")
    cfg.values["t"] = teacher.timesteps
    for key, value in (("tau", teacher.spec.neuron.tau),
                       ("tau_p", teacher.spec.neuron.tau_p),
                       ("lambda", teacher.spec.neuron.lambda_decay)):
        if not cfg.is_explicit(key):
            cfg.values[key] = value


def _role_and_widths(cfg: RunConfig, default_role: str):
    role = cfg.get("role") or ("custom" if cfg.is_explicit("widths") else default_role)
    if cfg.is_explicit("widths"):
        return role, cfg["widths"]
    if f"{role}_hidden" not in cfg.values:
        raise ConfigError(f"role {role!r} has no preset widths; pass --widths")
    input_dim = INPUT_DIMS[cfg["dataset"]]
    return role, (input_dim,) + tuple(cfg[f"{role}_hidden"]) + (10,)


# -- subcommands ---------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve(args, {"role": "role", "widths": "widths"})
    role, widths = _role_and_widths(cfg, "teacher")
    data_dir = _resolve_data_dir(cfg)
    train_set = load_dataset(cfg["dataset"], data_dir, "train")
    test_set = load_dataset(cfg["dataset"], data_dir, "test")
    out = _prepare_out_dir(cfg, args.force)
    _copy_config(out, args.config)

    spec = NetworkSpec(widths, cfg["t"], cfg.neuron(), role)
    net = SpikingNetwork(spec, seed=cfg["seed"])
    records = train_model(net, train_set, test_set, cfg.train_config(), _progress_printer("train"))
    save_checkpoint(net, out / "checkpoints" / f"{role}.ckpt", seed=cfg["seed"], epoch=cfg["epochs"] - 1,
                    extra={"dataset": cfg["dataset"]})
    write_metrics(records, out / "metrics" / "train.csv")
    return 0


def cmd_distill(args) -> int:
    cfg = _resolve(args, {**_LOSS_FLAGS, "student_role": "role", "widths": "widths"})
    teacher, _ = load_checkpoint(args.teacher)
    _check_teacher_compat(cfg, teacher)
    role, widths = _role_and_widths(cfg, "student")
    data_dir = _resolve_data_dir(cfg)
    train_set = load_dataset(cfg["dataset"], data_dir, "train")
    test_set = load_dataset(cfg["dataset"], data_dir, "test")
    out = _prepare_out_dir(cfg, args.force)
    _copy_config(out, args.config, args.loss_config)

    student = SpikingNetwork(NetworkSpec(widths, cfg["t"], cfg.neuron(), role), seed=cfg["seed"])
    train_cfg = cfg.train_config("distill_epochs" if not cfg.is_explicit("epochs") else "epochs")
    records = distill_model(teacher, student, train_set, test_set, train_cfg,
                            cfg.loss_config(), _progress_printer("distill"))
    save_checkpoint(student, out / "checkpoints" / f"{role}.ckpt", seed=cfg["seed"],
                    epoch=train_cfg.epochs - 1, extra={"dataset": cfg["dataset"], "teacher": str(args.teacher)})
    write_metrics(records, out / "metrics" / "distill.csv")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _resolve(args, {**_LOSS_FLAGS, "ta_widths": "ta_hidden", "student_widths": "student_hidden"})
    teacher, _ = load_checkpoint(args.teacher)
    _check_teacher_compat(cfg, teacher)
    input_dim = INPUT_DIMS[cfg["dataset"]]
    ta_widths = (input_dim,) + tuple(cfg["ta_hidden"]) + (10,)
    student_widths = (input_dim,) + tuple(cfg["student_hidden"]) + (10,)
    data_dir = _resolve_data_dir(cfg)
    train_set = load_dataset(cfg["dataset"], data_dir, "train")
    test_set = load_dataset(cfg["dataset"], data_dir, "test")
    out = _prepare_out_dir(cfg, args.force)
    _copy_config(out, args.config, args.loss_config)

    ta_spec = NetworkSpec(ta_widths, cfg["t"], cfg.neuron(), "ta")
    student_spec = NetworkSpec(student_widths, cfg["t"], cfg.neuron(), "student")
    train_cfg = cfg.train_config("distill_epochs" if not cfg.is_explicit("epochs") else "epochs")
    multistage_pipeline(args.teacher, ta_spec, student_spec, train_set, test_set,
                        train_cfg, cfg.loss_config(), out, _progress_printer("pipeline"))
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    net, _ = load_checkpoint(args.ckpt)
    data_dir = _resolve_data_dir(cfg)
    dataset = load_dataset(cfg["dataset"], data_dir, args.split)
    accuracy = evaluate(net, dataset, batch_size=cfg["batch_size"])
    print(f"accuracy={accuracy:.6f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args, {**_LOSS_FLAGS, "student_role": "role", "widths": "widths",
                          "subset_fraction": "subset_fraction", "val_fraction": "val_fraction"})
    teacher, _ = load_checkpoint(args.teacher)
    _check_teacher_compat(cfg, teacher)
    role, widths = _role_and_widths(cfg, "student")
    data_dir = _resolve_data_dir(cfg)
    train_set = load_dataset(cfg["dataset"], data_dir, "train")
    test_set = load_dataset(cfg["dataset"], data_dir, "test")
    out = _prepare_out_dir(cfg, args.force)
    _copy_config(out, args.config, args.loss_config)

    student_spec = NetworkSpec(widths, cfg["t"], cfg.neuron(), role)
    train_cfg = cfg.train_config("distill_epochs" if not cfg.is_explicit("epochs") else "epochs")
    if args.mode == "window":
        deltas = [int(d) for d in args.deltas.split(",")] if args.deltas else [cfg["delta"]]
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg["seed"]]
        rows = window_sweep(args.teacher, student_spec, train_set, test_set, deltas,
                            cfg["m"], train_cfg, seeds=seeds, stride=cfg["stride"],
                            jobs=args.jobs, csv_path=out / "metrics" / "sweep.csv")
        for d, m, s, acc in rows:
            print(f"delta={d} m={m} seed={s} accuracy={acc:.6f}")
    elif args.mode == "weights":
        best, rows = grid_search_weights(args.teacher, student_spec, train_set,
                                         cfg.loss_config(), train_cfg, step=args.step,
                                         subset_fraction=cfg["subset_fraction"],
                                         val_fraction=cfg["val_fraction"],
                                         jobs=args.jobs, csv_path=out / "metrics" / "sweep.csv")
        for a, b, g, acc in rows:
            print(f"alpha={a:.3f} beta={b:.3f} gamma={g:.3f} accuracy={acc:.6f}")
        print(f"best: alpha={best.alpha:.3f} beta={best.beta:.3f} gamma={best.gamma:.3f}")
    else:
        raise ConfigError(f"unknown sweep mode {args.mode!r}, expected window or weights")
    return 0


def cmd_features(args) -> int:
    cfg = _resolve(args)
    net, _ = load_checkpoint(args.ckpt)
    data_dir = _resolve_data_dir(cfg)
    dataset = load_dataset(cfg["dataset"], data_dir, args.split)
    export_features(net, dataset, args.out_file, batch_size=cfg["batch_size"])
    print(f"wrote {len(dataset)} feature rows to {args.out_file}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="spikedistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="supervised training from scratch")
    _add_common(p)
    p.add_argument("--role", choices=["teacher", "ta", "student"])
    p.add_argument("--widths", help="comma-separated layer widths, overrides role defaults")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="distill a trained teacher into a student")
    _add_common(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.add_argument("--student-role", dest="student_role", choices=["ta", "student"])
    p.add_argument("--widths")
    p.add_argument("--loss-config", dest="loss_config")
    for flag in ("--alpha", "--beta", "--gamma"):
        p.add_argument(flag, type=float)
    p.add_argument("--delta", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--m", type=int, choices=[1, 2])
    p.add_argument("--kl-direction", dest="kl_direction", choices=["student", "teacher"])
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("pipeline", help="teacher -> assistant -> student distillation")
    _add_common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--ta-widths", dest="ta_widths", help="comma-separated hidden widths for the assistant")
    p.add_argument("--student-widths", dest="student_widths")
    p.add_argument("--loss-config", dest="loss_config")
    for flag in ("--alpha", "--beta", "--gamma"):
        p.add_argument(flag, type=float)
    p.add_argument("--delta", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--m", type=int, choices=[1, 2])
    p.add_argument("--kl-direction", dest="kl_direction", choices=["student", "teacher"])
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="print a checkpoint's accuracy on a dataset split")
    _add_common(p, with_out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="window or loss-weight sweeps")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=["window", "weights"])
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-role", dest="student_role", choices=["ta", "student"])
    p.add_argument("--widths")
    p.add_argument("--loss-config", dest="loss_config")
    p.add_argument("--deltas", help="comma-separated window lengths (window mode)")
    p.add_argument("--seeds", help="comma-separated seeds (window mode)")
    p.add_argument("--step", type=float, default=0.1, help="simplex step (weights mode)")
    p.add_argument("--m", type=int, choices=[1, 2])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("features", help="export penultimate-layer features as CSV")
    _add_common(p, with_out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out-file", dest="out_file", required=True)
    p.set_defaults(func=cmd_features)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, ShapeError, StateError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
