"""Checkpoint persistence, metrics CSV emission and feature export.

Checkpoint layout (version 1), all integers little-endian:

    bytes 0..3   magic "SNKD"
    bytes 4..5   format version, u16
    bytes 6..9   metadata length in bytes, u32
    ...          metadata, UTF-8 JSON with sorted keys
    ...          payload: concatenated little-endian float64 values

The metadata holds the architecture, neuron config, seed/epoch, batch-norm
readiness flags, and a tensor manifest (name, shape, offset, nbytes) whose
byte ranges tile the payload exactly.  Because the JSON is canonicalized
and the payload is raw parameter bytes, saving the same network twice
produces identical files, and save -> load -> save is byte-stable.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ImageDataset, batches
from .errors import DataError
from .network import NetworkSpec, NeuronConfig, SpikingNetwork
from .training import MetricsRecord

MAGIC = b"SNKD"
VERSION = 1

_TENSOR_FIELDS = ("weight", "bias", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var")


def _layer_arrays(layer):
    return {
        "weight": layer.weight.data,
        "bias": layer.bias.data,
        "bn_gamma": layer.bn_gamma.data,
        "bn_beta": layer.bn_beta.data,
        "bn_running_mean": layer.bn_state.running_mean,
        "bn_running_var": layer.bn_state.running_var,
    }


def save_checkpoint(net: SpikingNetwork, path, seed: int = 0, epoch: int = 0,
                    extra: dict | None = None) -> None:
    """Serialize a network to ``path`` atomically (temp file + rename)."""
    manifest = []
    chunks = []
    offset = 0
    for i, layer in enumerate(net.layers):
        arrays = _layer_arrays(layer)
        for field in _TENSOR_FIELDS:
            arr = np.ascontiguousarray(arrays[field], dtype="<f8")
            nbytes = arr.size * 8
            manifest.append({
                "name": f"layer{i}.{field}",
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": nbytes,
            })
            chunks.append(arr.tobytes())
            offset += nbytes
    bn0 = net.layers[0].bn_state
    meta = {
        "net": {
            "widths": list(net.spec.widths),
            "timesteps": net.spec.timesteps,
            "role": net.spec.role,
            "neuron": {
                "tau": net.spec.neuron.tau,
                "tau_p": net.spec.neuron.tau_p,
                "lambda_decay": net.spec.neuron.lambda_decay,
            },
        },
        "bn": {"momentum": bn0.momentum, "eps": bn0.eps},
        "bn_ready": [layer.bn_state.ready for layer in net.layers],
        "seed": seed,
        "epoch": epoch,
        "manifest": manifest,
    }
    if extra:
        meta["extra"] = extra
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(chunks)

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<HI", VERSION, len(meta_bytes)))
            f.write(meta_bytes)
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise DataError(f"cannot write checkpoint {path}: {e}") from e
    finally:
        if tmp.exists():
            tmp.unlink()


def load_checkpoint(path):
    """Rebuild a network from a checkpoint; returns (net, meta)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a spikedistill checkpoint (bad magic)")
    version, meta_len = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version} unsupported, this build reads version {VERSION}")
    if len(raw) < 10 + meta_len:
        raise DataError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[10:10 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt metadata: {e}") from e
    payload = raw[10 + meta_len:]

    manifest = meta.get("manifest", [])
    expected = 0
    for entry in manifest:
        if entry["offset"] != expected:
            raise DataError(f"{path}: manifest gap or overlap at {entry['name']}")
        if entry["nbytes"] != int(np.prod(entry["shape"])) * 8:
            raise DataError(f"{path}: manifest shape/byte mismatch at {entry['name']}")
        expected += entry["nbytes"]
    if expected != len(payload):
        raise DataError(f"{path}: payload is {len(payload)} bytes, manifest covers {expected}")

    net_meta = meta["net"]
    neuron = NeuronConfig(**net_meta["neuron"])
    spec = NetworkSpec(tuple(net_meta["widths"]), net_meta["timesteps"], neuron, net_meta["role"])
    net = SpikingNetwork(spec, seed=meta.get("seed", 0))
    arrays = {}
    for entry in manifest:
        start = entry["offset"]
        flat = np.frombuffer(payload[start:start + entry["nbytes"]], dtype="<f8")
        arrays[entry["name"]] = flat.reshape(entry["shape"]).copy()
    try:
        for i, layer in enumerate(net.layers):
            layer.weight.data = arrays[f"layer{i}.weight"]
            layer.bias.data = arrays[f"layer{i}.bias"]
            layer.bn_gamma.data = arrays[f"layer{i}.bn_gamma"]
            layer.bn_beta.data = arrays[f"layer{i}.bn_beta"]
            layer.bn_state.running_mean = arrays[f"layer{i}.bn_running_mean"]
            layer.bn_state.running_var = arrays[f"layer{i}.bn_running_var"]
            layer.bn_state.momentum = meta["bn"]["momentum"]
            layer.bn_state.eps = meta["bn"]["eps"]
            layer.bn_state.ready = meta["bn_ready"][i]
            for p, name in ((layer.weight, "weight"), (layer.bias, "bias"),
                            (layer.bn_gamma, "bn_gamma"), (layer.bn_beta, "bn_beta")):
                if p.data.shape != p.grad.shape:
                    raise DataError(f"{path}: layer{i}.{name} shape {p.data.shape} does not fit the architecture")
    except KeyError as e:
        raise DataError(f"{path}: manifest is missing tensor {e}") from e
    return net, meta


def write_metrics(records, path) -> None:
    """Write MetricsRecord rows as CSV with 6-decimal fixed formatting."""
    lines = ["epoch,split,loss,accuracy"]
    for r in records:
        lines.append(f"{r.epoch},{r.split},{r.loss:.6f},{r.accuracy:.6f}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise DataError(f"cannot write metrics {path}: {e}") from e


def read_metrics(path):
    """Parse a metrics CSV written by write_metrics."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "epoch,split,loss,accuracy":
        raise DataError(f"{path}: not a metrics CSV")
    records = []
    for line in lines[1:]:
        epoch, split, loss, acc = line.split(",")
        records.append(MetricsRecord(int(epoch), split, float(loss), float(acc)))
    return records


def export_features(net: SpikingNetwork, dataset: ImageDataset, path,
                    batch_size: int = 256) -> None:
    """Write one CSV row per sample: label plus time-averaged penultimate activations."""
    rows = []
    for batch in batches(dataset, batch_size, net.timesteps, shuffle=False, train=False):
        feats = net.features(batch.data)
        for label, vec in zip(batch.labels, feats):
            rows.append(f"{label}," + ",".join(f"{v:.6f}" for v in vec))
    try:
        Path(path).write_text("\n".join(rows) + "\n")
    except OSError as e:
        raise DataError(f"cannot write features {path}: {e}") from e
