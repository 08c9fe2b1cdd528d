"""Synthetic datasets, CSV ingestion, standardization and splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

TOY_NAMES = ("checkerboard", "rings", "two_moons", "eight_gaussians", "two_spirals")

RING_RADII = (1.0, 2.5)
RING_NOISE = 0.08
CHECKER_CELL = 2.0
CHECKER_HALF_WIDTH = 4.0


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class Dataset:
    x: np.ndarray
    name: str
    logpdf: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if not np.all(np.isfinite(self.x)):
            raise DataError(f"dataset {self.name!r} contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


# -- 2D toys ----------------------------------------------------------------------

def _truncated_normal(rng, n, scale, limit=3.0):
    """Normal noise redrawn until it lies within ``limit`` standard deviations."""
    out = rng.normal(0.0, scale, n)
    bad = np.abs(out) > limit * scale
    while bad.any():
        out[bad] = rng.normal(0.0, scale, bad.sum())
        bad = np.abs(out) > limit * scale
    return out


def checkerboard_black(x: np.ndarray) -> np.ndarray:
    """Membership in the black cells of the 4x4 board on [-4, 4]^2."""
    x = np.asarray(x, dtype=np.float64)
    inside = np.all(np.abs(x) <= CHECKER_HALF_WIDTH, axis=1)
    cells = np.floor((x + CHECKER_HALF_WIDTH) / CHECKER_CELL).astype(int)
    return inside & ((cells[:, 0] + cells[:, 1]) % 2 == 0)


def rings_support(x: np.ndarray, margin: float = 3.0) -> np.ndarray:
    """Radius within ``margin`` noise standard deviations of either ring."""
    r = np.linalg.norm(np.asarray(x, dtype=np.float64), axis=1)
    return np.any([np.abs(r - rr) <= margin * RING_NOISE for rr in RING_RADII], axis=0)


def _checkerboard(rng, n):
    black = np.array([(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0])
    cell = black[rng.integers(0, len(black), n)]
    return (cell + rng.uniform(0.0, 1.0, (n, 2))) * CHECKER_CELL - CHECKER_HALF_WIDTH


def _rings(rng, n):
    radius = np.asarray(RING_RADII)[rng.integers(0, 2, n)] + _truncated_normal(rng, n, RING_NOISE)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)


def _two_moons(rng, n):
    t = rng.uniform(0.0, np.pi, n)
    upper = rng.integers(0, 2, n).astype(bool)
    x = np.where(upper, np.cos(t), 1.0 - np.cos(t))
    y = np.where(upper, np.sin(t), 0.5 - np.sin(t))
    pts = np.stack([x - 0.5, y - 0.25], axis=1)
    return pts + rng.normal(0.0, 0.1, (n, 2))


def _eight_gaussians(rng, n):
    angles = np.arange(8) * np.pi / 4
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers[rng.integers(0, 8, n)] + rng.normal(0.0, 0.2, (n, 2))


def _two_spirals(rng, n):
    theta = np.sqrt(rng.uniform(0.0, 1.0, n)) * 3 * np.pi
    sign = np.where(rng.integers(0, 2, n) == 0, 1.0, -1.0)
    pts = sign[:, None] * np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / 3.0
    return pts + rng.normal(0.0, 0.1, (n, 2))


_TOYS = {
    "checkerboard": _checkerboard,
    "rings": _rings,
    "two_moons": _two_moons,
    "eight_gaussians": _eight_gaussians,
    "two_spirals": _two_spirals,
}


def gen_toy2d(name: str, n: int, seed: int = 0) -> Dataset:
    if name not in _TOYS:
        raise ValueError(f"unknown toy dataset {name!r}; valid names: {', '.join(TOY_NAMES)}")
    if n < 1:
        raise ValueError(f"gen_toy2d: n must be >= 1, got {n}")
    return Dataset(_TOYS[name](np.random.default_rng(seed), n), name)


# -- 1D mixture ---------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureSpec:
    """Uniform mixture of 1D Gaussians with a shared standard deviation."""

    means: tuple = (-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0)
    std: float = 0.5

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.means), 1.0 / len(self.means))

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64)
        comp = -0.5 * ((x[:, None] - mu[None, :]) / self.std) ** 2 \
            - 0.5 * np.log(2 * np.pi * self.std ** 2)
        return logsumexp(comp, axis=1, b=self.weights[None, :])


def gen_mixture1d(spec: MixtureSpec, n: int, seed: int = 0) -> Dataset:
    if n < 1:
        raise ValueError(f"gen_mixture1d: n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, len(spec.means), n)
    x = np.asarray(spec.means, dtype=np.float64)[comp] + rng.normal(0.0, spec.std, n)
    return Dataset(x[:, None], "mixture1d", logpdf=lambda v: spec.logpdf(v))


# -- CSV ----------------------------------------------------------------------------------

def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a comma-separated float matrix; the first data row fixes the width."""
    rows = []
    width = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc.strerror}") from None
    with fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not record or all(not f.strip() for f in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise DataError(f"{path}: line {lineno}: expected {width} fields, got {len(record)}")
            try:
                values = []
                for col, field_ in enumerate(record, start=1):
                    values.append(float(field_))
            except ValueError:
                raise DataError(f"{path}: line {lineno}, column {col}: "
                                f"cannot parse {field_.strip()!r} as a float") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), str(path))


def save_csv(path, x: np.ndarray, header: list[str] | None = None) -> None:
    """Write rows with round-trippable float formatting."""
    from .io import atomic_write

    lines = [",".join(header)] if header else []
    lines.extend(",".join(repr(float(v)) for v in row) for row in np.atleast_2d(x))
    atomic_write(path, "\n".join(lines) + "\n")


# -- standardization and splits ------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] < 2:
            raise DataError("standardizer needs at least 2 rows")
        std = x.std(axis=0)
        for j, s in enumerate(std):
            if not s > 0:
                raise DataError(f"column {j} is constant; cannot standardize")
        return cls(x.mean(axis=0), std)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, u) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) * self.std + self.mean

    def log_det(self) -> float:
        """Per-sample log|det| of the map raw -> standardized."""
        return float(-np.sum(np.log(self.std)))

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def standardize_fit_apply(train: Dataset) -> tuple[Standardizer, Dataset]:
    st = Standardizer.fit(train.x)
    return st, Dataset(st.apply(train.x), train.name, None)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    indices: dict = field(default_factory=dict)


def split(data: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Splits:
    """Seeded permutation split.  Val and test get ``floor(frac * n)`` rows and
    the remainder goes to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ValueError(f"split: fractions must be three positive numbers summing to <= 1, got {fractions}")
    n = data.n
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split: n={n} gives an empty split ({n_train}/{n_val}/{n_test})")
    perm = np.random.default_rng(seed).permutation(n)
    idx = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val],
           "test": perm[n_train + n_val:]}
    parts = {k: Dataset(data.x[v], f"{data.name}:{k}", data.logpdf) for k, v in idx.items()}
    return Splits(parts["train"], parts["val"], parts["test"], idx)
