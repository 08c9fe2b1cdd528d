"""The full flow: a stack of LDU blocks over a standard-normal base."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffengine as ad
from .layers import DEFAULT_MAX_ITER, DEFAULT_TOL, AffineLayer, InversionStats, LduBlock

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelSpec:
    """Architecture.  Defaults follow the 2D toy setting."""

    dim: int = 2
    blocks: int = 16
    dscales: int = 4
    K: int = 4
    hidden: list = field(default_factory=lambda: [100])
    shifts: bool = True
    # initial frequencies a_k of the K sinusoids; distinct values break the
    # symmetry between them while the layer is still the identity (alpha = 0)
    a_init: list | None = None
    kind: str = "sinusoidal"  # or "affine" for the baseline
    init_seed: int = 0

    def validate(self) -> None:
        for name in ("dim", "blocks", "dscales", "K"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if any(int(h) < 1 for h in self.hidden):
            raise ValueError(f"model.hidden sizes must be >= 1, got {self.hidden}")
        if self.kind not in ("sinusoidal", "affine"):
            raise ValueError(f"model.kind must be 'sinusoidal' or 'affine', got {self.kind!r}")
        if self.a_init is not None and len(self.a_init) != self.K:
            raise ValueError(f"model.a_init must have K={self.K} entries, got {len(self.a_init)}")
        if self.a_init is not None and any(a <= 0 for a in self.a_init):
            raise ValueError("model.a_init entries must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def default_a_init(K: int) -> np.ndarray:
    return np.geomspace(0.5, 4.0, K) if K > 1 else np.ones(1)


def base_logpdf(z) -> object:
    """Standard-normal log density per row."""
    D = z.shape[-1]
    return ad.sub(-0.5 * D * LOG_2PI, ad.mul(0.5, ad.sum(ad.square(z), axis=-1)))


@dataclass
class SampleResult:
    x: np.ndarray
    z: np.ndarray
    stats: InversionStats


class FlowModel:
    """``x -> z`` through blocks 1..L; log p(x) = log N(z) + sum of block logdets.

    Inputs are standardized coordinates; :attr:`standardizer`, when set, is
    only used by the ``*_raw`` helpers.
    """

    def __init__(self, spec: ModelSpec, standardizer=None):
        spec.validate()
        self.spec = spec
        self.D = spec.dim
        self.store = ad.ParamStore()
        self.standardizer = standardizer
        rng = np.random.default_rng(spec.init_seed)
        if spec.kind == "affine":
            self.blocks = [AffineLayer(spec.dim, self.store, "affine")]
            return
        a_init = default_a_init(spec.K) if spec.a_init is None else np.asarray(spec.a_init, float)
        self.blocks = [LduBlock(spec.dim, spec.K, spec.dscales, spec.hidden, self.store,
                                f"block{l}", rng, shifts=spec.shifts, a_init=a_init)
                       for l in range(spec.blocks)]

    # -- density direction --------------------------------------------------

    def forward_to_base(self, x):
        """Map data to base space; returns ``(z, logdet)`` with one logdet per row."""
        z = x if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.D:
            raise ValueError(f"forward_to_base: expected shape (n, {self.D}), got {z.shape}")
        logdet = None
        for block in self.blocks:
            z, ld = block.forward(z)
            logdet = ld if logdet is None else ad.add(logdet, ld)
        return z, logdet

    def log_prob(self, x):
        z, logdet = self.forward_to_base(x)
        return ad.add(base_logpdf(z), logdet)

    def log_prob_raw(self, x_raw) -> np.ndarray:
        """Log density in raw data coordinates (standardizer Jacobian folded in)."""
        if self.standardizer is None:
            return ad.evaluate(self.log_prob(np.asarray(x_raw, dtype=np.float64)))
        lp = self.log_prob(self.standardizer.apply(x_raw))
        return ad.evaluate(lp) + self.standardizer.log_det()

    # -- sampling direction ---------------------------------------------------

    def inverse(self, z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, fallback=True,
                stats: InversionStats | None = None) -> np.ndarray:
        x = np.asarray(z, dtype=np.float64)
        for block in reversed(self.blocks):
            x = block.inverse(x, tol, max_iter, fallback, stats)
        return x

    def sample(self, n: int, seed: int = 0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
               fallback=True) -> SampleResult:
        """Draw base noise from a Philox stream keyed by ``seed`` and invert."""
        if n < 1:
            raise ValueError(f"sample: n must be >= 1, got {n}")
        z = np.random.Generator(np.random.Philox(seed)).standard_normal((n, self.D))
        stats = InversionStats()
        x = self.inverse(z, tol, max_iter, fallback, stats)
        return SampleResult(x, z, stats)

    def reconstruct(self, x, max_iter: int, tol=DEFAULT_TOL):
        """Round trip ``x -> z -> x_hat`` with capped fixed-point iterations and no
        sequential fallback; returns ``(x_hat, mean l2 error, stats)``."""
        if max_iter < 1:
            raise ValueError(f"reconstruct: max_iter must be >= 1, got {max_iter}")
        x = np.asarray(x, dtype=np.float64)
        z, _ = self.forward_to_base(x)
        stats = InversionStats()
        x_hat = self.inverse(z, tol, max_iter, fallback=False, stats=stats)
        err = float(np.mean(np.linalg.norm(x - x_hat, axis=1)))
        return x_hat, err, stats

    # -- parameters -------------------------------------------------------------

    def parameters(self) -> dict:
        return self.store.snapshot()

    def load_parameters(self, values) -> None:
        self.store.load(values)

    def copy(self) -> "FlowModel":
        clone = FlowModel(self.spec, self.standardizer)
        clone.load_parameters(self.parameters())
        return clone
