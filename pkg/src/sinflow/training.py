"""Maximum-likelihood training: NLL, Adam/AdamW, learning-rate schedules, loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffengine as ad
from .io import atomic_write

log = logging.getLogger(__name__)

SCHEDULES = ("none", "exponential", "cosine")


@dataclass
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 128
    lr: float = 1e-3
    schedule: str = "none"
    gamma: float = 0.99
    decay_every: int = 1000  # exponential schedule: one decay per this many steps
    lr_min: float = 0.0
    weight_decay: float = 0.0
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    val_every: int = 500
    clip_norm: float | None = 10.0

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError(f"train.steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"train.lr must be > 0, got {self.lr}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"train.schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"train.gamma must be in (0, 1], got {self.gamma}")
        if self.decay_every < 1:
            raise ValueError(f"train.decay_every must be >= 1, got {self.decay_every}")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"train.optimizer must be 'adam' or 'adamw', got {self.optimizer!r}")
        if self.weight_decay < 0:
            raise ValueError(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if self.val_every < 1:
            raise ValueError(f"train.val_every must be >= 1, got {self.val_every}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"train.clip_norm must be > 0 or null, got {self.clip_norm}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def nll_loss(batch, model) -> ad.Tensor:
    """Negative mean log-likelihood of a batch, on the tape."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"nll_loss: batch must be a non-empty (n, D) array, got shape {batch.shape}")
    return ad.neg(ad.mean(model.log_prob(ad.constant(batch))))


def mean_nll(x, model, chunk: int = 4096) -> float:
    """Mean NLL of ``x`` evaluated off the tape, in fixed-size chunks."""
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        total += float(np.sum(ad.evaluate(model.log_prob(x[i:i + chunk]))))
    return -total / x.shape[0]


# -- optimizer -------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(store: ad.ParamStore, state: OptimizerState, lr: float, weight_decay: float = 0.0,
              mode: str = "adam", betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place.

    ``adamw`` shrinks parameters by ``lr * weight_decay`` before the Adam
    delta; ``adam`` instead adds ``weight_decay * theta`` to the gradient.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in store:
        g = p.grad
        if mode == "adam" and weight_decay:
            g = g + weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta = p.data
        if mode == "adamw" and weight_decay:
            theta = theta - lr * weight_decay * theta
        p.data = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grad_norm(store: ad.ParamStore, max_norm: float) -> float:
    """Rescale all gradients so their global l2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in store))
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in store:
            p.grad = p.grad * scale
    return norm


def lr_at(step: int, config: TrainConfig) -> float:
    step = min(max(step, 0), config.steps)
    if config.schedule == "exponential":
        return config.lr * config.gamma ** (step // config.decay_every)
    if config.schedule == "cosine":
        frac = step / config.steps if config.steps else 1.0
        return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + math.cos(math.pi * frac))
    return config.lr


# -- loop -----------------------------------------------------------------------------------

class TrainingAborted(RuntimeError):
    def __init__(self, step: int, message: str, last_good: dict):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainResult:
    model: object  # best-validation snapshot
    final_model: object
    history: list  # rows of (step, train_loss, val_nll, lr)
    best_val_nll: float
    best_step: int


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of minibatch index arrays from reshuffled epochs."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield perm[i:i + batch_size]


def train(model, train_x, val_x, config: TrainConfig, on_validate=None) -> TrainResult:
    """Run ``config.steps`` optimizer steps, keeping the best-validation snapshot.

    ``on_validate(step, model)`` is called after each validation pass.
    """
    config.validate()
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("train: training and validation splits must be non-empty")

    store = model.store
    opt = OptimizerState()
    rng = np.random.default_rng(config.seed)
    batches = _batches(train_x.shape[0], config.batch_size, rng)

    best_val = mean_nll(val_x, model)
    best_params, best_step = store.snapshot(), 0
    history = []
    running, count = 0.0, 0

    for step in range(1, config.steps + 1):
        lr = lr_at(step - 1, config)
        loss = nll_loss(train_x[next(batches)], model)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingAborted(step, f"non-finite training loss {value}", best_params)
        store.zero_grad()
        ad.backward(loss, store)
        if config.clip_norm is not None:
            gnorm = clip_grad_norm(store, config.clip_norm)
            if not np.isfinite(gnorm):
                raise TrainingAborted(step, "non-finite gradient", best_params)
        adam_step(store, opt, lr, config.weight_decay, config.optimizer, config.betas, config.eps)
        running += value
        count += 1

        if step % config.val_every == 0 or step == config.steps:
            val = mean_nll(val_x, model)
            if not np.isfinite(val):
                raise TrainingAborted(step, f"non-finite validation NLL {val}", best_params)
            history.append((step, running / count, val, lr))
            log.info("step %d  train %.5f  val %.5f  lr %.3g", step, running / count, val, lr)
            running, count = 0.0, 0
            if val < best_val:
                best_val, best_params, best_step = val, store.snapshot(), step
            if on_validate is not None:
                on_validate(step, model)

    final = model.copy()
    best = model.copy()
    best.load_parameters(best_params)
    return TrainResult(best, final, history, best_val, best_step)


def history_csv(history) -> str:
    lines = ["step,train_loss,val_nll,lr"]
    lines += [f"{s},{tl!r},{vn!r},{lr!r}" for s, tl, vn, lr in history]
    return "\n".join(lines) + "\n"


def write_history(path, history) -> None:
    atomic_write(path, history_csv(history))
