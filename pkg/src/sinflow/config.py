"""Run configuration: dataset, model, optimizer, output directory and seed."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .data import TOY_NAMES, Dataset, MixtureSpec, Splits, Standardizer, gen_mixture1d, gen_toy2d, load_csv, split
from .model import ModelSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


DATASET_KINDS = ("toy", "mixture", "csv")
DEFAULT_N = {"toy": 100_000, "mixture": 200_000}


@dataclass
class RunConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "toy", "name": "checkerboard"})
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    fractions: tuple = (0.8, 0.1, 0.1)
    out: str = "runs/default"
    seed: int = 0

    def validate(self) -> None:
        _check_dataset(self.dataset)
        try:
            self.model.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(self.fractions) != 3 or any(not f > 0 for f in self.fractions) or sum(self.fractions) > 1 + 1e-12:
            raise ConfigError(f"fractions must be three positive numbers summing to <= 1, got {list(self.fractions)}")

    def to_dict(self) -> dict:
        model = self.model.to_dict()
        model.pop("init_seed")  # both seeds follow the run seed
        train = self.train.to_dict()
        train.pop("seed")
        return {"dataset": dict(self.dataset), "model": model, "train": train,
                "fractions": list(self.fractions), "out": self.out, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
        _reject_unknown("config", d, {f.name for f in fields(cls)})
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"config.seed must be a non-negative integer, got {seed!r}")
        model = _section("model", d.get("model", {}), ModelSpec, {"init_seed"})
        train = _section("train", d.get("train", {}), TrainConfig, {"seed"})
        model.init_seed = train.seed = seed
        if isinstance(train.betas, list):
            train.betas = tuple(train.betas)
        cfg = cls(dataset=dict(d.get("dataset", {"kind": "toy", "name": "checkerboard"})), model=model,
                  train=train, fractions=tuple(d.get("fractions", (0.8, 0.1, 0.1))),
                  out=str(d.get("out", "runs/default")), seed=seed)
        cfg.validate()
        return cfg


def _reject_unknown(where: str, d: dict, known: set) -> None:
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"{where}: unknown field {extra[0]!r} (known: {', '.join(sorted(known))})")


def _section(where: str, d: dict, cls, hidden: set):
    if not isinstance(d, dict):
        raise ConfigError(f"config.{where} must be an object")
    _reject_unknown(f"config.{where}", d, {f.name for f in fields(cls)} - hidden)
    defaults = cls()
    nullable = {f.name for f in fields(cls) if "None" in str(f.type)}
    for key, value in d.items():
        ref = getattr(defaults, key)
        if value is None and key in nullable:
            continue
        if isinstance(ref, bool) and not isinstance(value, bool):
            raise ConfigError(f"config.{where}.{key} must be true or false, got {value!r}")
        if isinstance(ref, int) and not isinstance(ref, bool) and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"config.{where}.{key} must be an integer, got {value!r}")
        if isinstance(ref, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"config.{where}.{key} must be a number, got {value!r}")
    return cls(**{**defaults.__dict__, **d})


def _check_dataset(ds: dict) -> None:
    kind = ds.get("kind")
    if kind not in DATASET_KINDS:
        raise ConfigError(f"config.dataset.kind must be one of {DATASET_KINDS}, got {kind!r}")
    allowed = {"toy": {"kind", "name", "n"}, "mixture": {"kind", "means", "std", "n"},
               "csv": {"kind", "path", "has_header"}}[kind]
    _reject_unknown("config.dataset", ds, allowed)
    if kind == "toy" and ds.get("name") not in TOY_NAMES:
        raise ConfigError(f"config.dataset.name must be one of {TOY_NAMES}, got {ds.get('name')!r}")
    if kind == "csv" and not isinstance(ds.get("path"), str):
        raise ConfigError("config.dataset.path is required for csv datasets")
    if kind == "mixture" and "std" in ds and not ds["std"] > 0:
        raise ConfigError(f"config.dataset.std must be > 0, got {ds['std']}")
    n = ds.get("n", 10)
    if not isinstance(n, int) or isinstance(n, bool) or n < 10:
        raise ConfigError(f"config.dataset.n must be an integer >= 10, got {n!r}")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    return RunConfig.from_dict(raw)


def build_dataset(cfg: RunConfig) -> Dataset:
    ds = cfg.dataset
    n = ds.get("n", DEFAULT_N.get(ds["kind"]))
    if ds["kind"] == "toy":
        return gen_toy2d(ds["name"], n, seed=cfg.seed)
    if ds["kind"] == "mixture":
        spec = MixtureSpec(**{k: (tuple(v) if k == "means" else v) for k, v in ds.items() if k in ("means", "std")})
        return gen_mixture1d(spec, n, seed=cfg.seed)
    return load_csv(ds["path"], ds.get("has_header", False))


@dataclass
class Prepared:
    splits: Splits
    standardizer: Standardizer
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def prepare(cfg: RunConfig) -> Prepared:
    """Generate or load the data, split it and standardize with train statistics."""
    data = build_dataset(cfg)
    if data.dim != cfg.model.dim:
        raise ConfigError(f"config.model.dim is {cfg.model.dim} but the dataset has {data.dim} columns")
    # offset keeps the split permutation independent of the generator stream
    sp = split(data, cfg.fractions, seed=cfg.seed + 1)
    st = Standardizer.fit(sp.train.x)
    return Prepared(sp, st, st.apply(sp.train.x), st.apply(sp.val.x), st.apply(sp.test.x))
