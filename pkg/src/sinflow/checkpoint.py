"""JSON checkpoints with canonical, bit-exact float serialization.

Floats are stored as ``repr`` strings, which round-trip exactly, so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import Standardizer
from .io import atomic_write
from .model import FlowModel

FORMAT_VERSION = 1
REQUIRED = ("version", "config", "standardizer", "params", "step", "best_val_nll")


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    config: RunConfig
    standardizer: Standardizer
    params: dict
    step: int
    best_val_nll: float

    @classmethod
    def from_model(cls, config: RunConfig, model: FlowModel, step: int, best_val_nll: float) -> "Checkpoint":
        return cls(config, model.standardizer, model.parameters(), step, best_val_nll)

    def model(self) -> FlowModel:
        m = FlowModel(self.config.model, self.standardizer)
        m.load_parameters(self.params)
        return m


def _fstr(values) -> list:
    return [repr(float(v)) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def _floats(where: str, values) -> np.ndarray:
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except (TypeError, ValueError):
        raise CheckpointError(f"{where}: values must be decimal float strings") from None


def _config_echo(config: RunConfig) -> dict:
    # the output directory is left out so identical runs in different places
    # produce identical files
    d = config.to_dict()
    d.pop("out")
    return d


def dumps(ckpt: Checkpoint) -> str:
    doc = {
        "version": FORMAT_VERSION,
        "config": _config_echo(ckpt.config),
        "standardizer": {"mean": _fstr(ckpt.standardizer.mean), "std": _fstr(ckpt.standardizer.std)},
        "params": [{"name": k, "shape": list(v.shape), "data": _fstr(v)} for k, v in ckpt.params.items()],
        "step": int(ckpt.step),
        "best_val_nll": repr(float(ckpt.best_val_nll)),
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, dumps(ckpt))


def loads(text: str, source: str = "<string>") -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{source}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"{source}: top level must be an object")
    for key in REQUIRED:
        if key not in doc:
            raise CheckpointError(f"{source}: missing field {key!r}")
    if doc["version"] != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {doc['version']!r} "
                              f"(expected {FORMAT_VERSION})")
    config = RunConfig.from_dict(doc["config"])
    st = doc["standardizer"]
    if not isinstance(st, dict) or "mean" not in st or "std" not in st:
        raise CheckpointError(f"{source}: standardizer needs 'mean' and 'std'")
    standardizer = Standardizer(_floats("standardizer.mean", st["mean"]), _floats("standardizer.std", st["std"]))
    if standardizer.mean.shape != (config.model.dim,) or standardizer.std.shape != (config.model.dim,):
        raise CheckpointError(f"{source}: standardizer width does not match model.dim={config.model.dim}")

    params = {}
    for entry in doc["params"]:
        for key in ("name", "shape", "data"):
            if key not in entry:
                raise CheckpointError(f"{source}: parameter entry missing field {key!r}")
        name, shape = entry["name"], tuple(entry["shape"])
        data = _floats(f"params[{name}]", entry["data"])
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{source}: parameter {name!r} has {data.size} values for shape {list(shape)}")
        params[name] = data.reshape(shape)

    expected = FlowModel(config.model).parameters()
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params)) or sorted(set(params) - set(expected))
        raise CheckpointError(f"{source}: parameter set does not match the model config (first mismatch: {missing[0]!r})")
    for name, value in params.items():
        if value.shape != expected[name].shape:
            raise CheckpointError(f"{source}: parameter {name!r} has shape {list(value.shape)}, "
                                  f"model expects {list(expected[name].shape)}")
    step = doc["step"]
    if not isinstance(step, int) or step < 0:
        raise CheckpointError(f"{source}: step must be a non-negative integer")
    best = _floats("best_val_nll", [doc["best_val_nll"]])[0]
    # keep file order so a re-save is byte-identical
    return Checkpoint(config, standardizer, params, step, best)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return loads(text, str(path))
