"""Flow layers: sinusoidal D-scales, autoregressive shifts and LDU blocks.

Every layer maps ``z -> (y, logdet)`` in the density direction (data towards
base) and can be inverted.  ``forward`` works on tape tensors and on plain
arrays alike; inversion always runs on plain arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffengine as ad
from .conditioners import (FORWARD, REVERSE, IndependentParams, MaskedConditioner,
                           apply_masked, constrain)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass
class InversionResult:
    z: np.ndarray
    iterations: int
    converged: bool
    # first iteration at which each row's update fell below tol; -1 if never
    row_iterations: np.ndarray
    trace: list | None = None


@dataclass
class InversionStats:
    """Diagnostics gathered while inverting a stack of layers."""

    records: list = field(default_factory=list)
    fallbacks: int = 0

    def add(self, name: str, res: InversionResult, fell_back: bool = False):
        self.records.append((name, res.iterations, res.converged, res.row_iterations))
        self.fallbacks += int(fell_back)

    def mean_iterations(self) -> dict:
        out: dict = {}
        for name, it, _, _ in self.records:
            out.setdefault(name, []).append(it)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def nonconverged(self) -> int:
        return sum(not conv for _, _, conv, _ in self.records)

    def row_convergence_fraction(self, cap: int) -> float:
        """Fraction of (layer, row) inversions that converged within ``cap`` iterations."""
        rows = np.concatenate([r for *_, r in self.records]) if self.records else np.zeros(0)
        if rows.size == 0:
            return 1.0
        return float(np.mean((rows >= 1) & (rows <= cap)))


def fixed_point(y: np.ndarray, residual, tol: float, max_iter: int, init=None,
                keep_trace: bool = False) -> InversionResult:
    """Solve ``z + residual(z) = y`` by iterating ``z <- y - residual(z)``.

    Stops once the largest absolute update over the whole batch drops below
    ``tol`` or after ``max_iter`` updates; returns the latest iterate.
    """
    if tol <= 0:
        raise ValueError("fixed_point: tol must be positive")
    if max_iter < 1:
        raise ValueError("fixed_point: max_iter must be >= 1")
    z = np.array(y if init is None else np.broadcast_to(init, y.shape), dtype=np.float64)
    rows = np.full(y.shape[0], -1, dtype=np.int64)
    trace = [z] if keep_trace else None
    converged = False
    j = 0
    while j < max_iter:
        z_new = y - residual(z)
        j += 1
        step = np.abs(z_new - z)
        row_step = step.max(axis=-1) if step.ndim > 1 else step
        rows[(rows < 0) & (row_step < tol)] = j
        z = z_new
        if keep_trace:
            trace.append(z)
        if step.max(initial=0.0) < tol:
            converged = True
            break
    return InversionResult(z, j, converged, rows, trace)


def _expand_last(x):
    if isinstance(x, ad.Tensor):
        return ad.reshape(x, x.shape + (1,))
    return x[..., None]


def sinusoidal_map(z, c):
    """Output and derivative ``1 + g'(z)`` of a sinusoidal transformer.

    ``c`` holds constrained parameters (``a``, ``b``, ``w``: D x K; ``alpha``,
    ``d``: D).  Only the z-dependent sine term is scaled by alpha.
    """
    phase = ad.add(ad.mul(_expand_last(z), ad.mul(2.0, c.a)), ad.mul(2.0, c.b))
    coef = ad.div(c.w, ad.mul(2.0, c.a))
    osc = ad.sum(ad.mul(coef, ad.sin(phase)), axis=-1)
    const = ad.sum(ad.mul(coef, ad.sin(ad.mul(2.0, c.b))), axis=-1)
    y = ad.add(ad.sub(z, ad.mul(c.alpha, osc)), ad.add(const, c.d))
    slope = ad.sub(1.0, ad.mul(c.alpha, ad.sum(ad.mul(c.w, ad.cos(phase)), axis=-1)))
    return y, slope


class SinusoidalLayer:
    """A D-scale: ``y_i = z_i + g(z_i)`` with a contractive residual ``g``."""

    kind = "sinusoidal"

    def __init__(self, D: int, K: int, store: ad.ParamStore, prefix: str, a_init=1.0):
        self.D, self.K = D, K
        self.name = prefix
        self.params = IndependentParams(D, K, store, prefix, a_init=a_init)

    def constrained(self):
        return constrain(self.params)

    def _params_for(self, z):
        if isinstance(z, ad.Tensor):
            return self.constrained()
        with ad.no_grad():
            return self.constrained().numpy()

    def forward(self, z):
        """Return ``(y, logdet)``; logdet has one entry per row."""
        y, slope = sinusoidal_map(z, self._params_for(z))
        return y, ad.sum(ad.log(slope), axis=-1)

    def derivative(self, z):
        return sinusoidal_map(z, self._params_for(z))[1]

    def residual_fn(self):
        with ad.no_grad():
            c = self.constrained().numpy()
        return lambda z: sinusoidal_map(z, c)[0] - z

    def max_alpha(self) -> float:
        with ad.no_grad():
            return float(np.max(np.abs(self.constrained().alpha.data)))

    def inverse(self, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None,
                keep_trace=False) -> InversionResult:
        return fixed_point(np.asarray(y, dtype=np.float64), self.residual_fn(), tol, max_iter,
                           init=init, keep_trace=keep_trace)


class ShiftLayer:
    """``y = z + c(z)`` with a masked conditioner: L uses forward ordering
    (unit lower-triangular Jacobian), U uses reverse ordering (unit upper)."""

    kind = "shift"

    def __init__(self, D: int, hidden_sizes, direction: str, store: ad.ParamStore,
                 prefix: str, rng: np.random.Generator):
        if direction not in ("L", "U"):
            raise ValueError(f"ShiftLayer: direction must be 'L' or 'U', got {direction!r}")
        self.D = D
        self.direction = direction
        self.name = prefix
        ordering = FORWARD if direction == "L" else REVERSE
        self.conditioner = MaskedConditioner(D, hidden_sizes, ordering, store, prefix, rng)

    def forward(self, z):
        y = ad.add(z, self.conditioner(z))
        n = z.shape[0]
        return y, (ad.constant(np.zeros(n)) if isinstance(z, ad.Tensor) else np.zeros(n))

    def residual_fn(self):
        params = self.conditioner.numpy_params()
        return lambda z: apply_masked(params, z)

    def inverse_fixed_point(self, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                            init=None) -> InversionResult:
        return fixed_point(np.asarray(y, dtype=np.float64), self.residual_fn(), tol, max_iter,
                           init=init)

    def inverse_sequential(self, y) -> np.ndarray:
        """Exact inverse in D passes, one component per pass in dependency order."""
        y = np.asarray(y, dtype=np.float64)
        f = self.residual_fn()
        z = y.copy()
        order = range(self.D) if self.direction == "L" else range(self.D - 1, -1, -1)
        for i in order:
            z[:, i] = y[:, i] - f(z)[:, i]
        return z

    def inverse(self, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, fallback=True,
                stats: InversionStats | None = None) -> np.ndarray:
        res = self.inverse_fixed_point(y, tol, max_iter)
        fell_back = fallback and not res.converged
        if stats is not None:
            stats.add(self.name, res, fell_back)
        return self.inverse_sequential(y) if fell_back else res.z


class AffineLayer:
    """Elementwise ``y = exp(s) * z + t``; used as the affine-only baseline."""

    kind = "affine"

    def __init__(self, D: int, store: ad.ParamStore, prefix: str):
        self.D = D
        self.name = prefix
        self.log_scale = store.add(f"{prefix}.log_scale", np.zeros(D))
        self.shift = store.add(f"{prefix}.shift", np.zeros(D))

    def forward(self, z):
        if isinstance(z, ad.Tensor):
            s, t = self.log_scale, self.shift
            logdet = ad.add(ad.constant(np.zeros(z.shape[0])), ad.sum(s))
        else:
            s, t = self.log_scale.data, self.shift.data
            logdet = np.full(z.shape[0], s.sum())
        return ad.add(ad.mul(z, ad.exp(s)), t), logdet

    def inverse(self, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, fallback=True,
                stats: InversionStats | None = None) -> np.ndarray:
        return (np.asarray(y) - self.shift.data) * np.exp(-self.log_scale.data)


class LduBlock:
    """One constituent transformation: U shift, then a chain of S D-scales, then L shift.

    With ``shifts=False`` the block is the D-scale chain alone.
    """

    kind = "ldu"

    def __init__(self, D: int, K: int, n_dscales: int, hidden_sizes, store: ad.ParamStore,
                 prefix: str, rng: np.random.Generator, shifts: bool = True, a_init=1.0):
        self.D = D
        self.name = prefix
        self.upper = ShiftLayer(D, hidden_sizes, "U", store, f"{prefix}.U", rng) if shifts else None
        self.dscales = [SinusoidalLayer(D, K, store, f"{prefix}.D{s}", a_init=a_init)
                        for s in range(n_dscales)]
        self.lower = ShiftLayer(D, hidden_sizes, "L", store, f"{prefix}.L", rng) if shifts else None

    def layers(self) -> list:
        seq = [self.upper] + self.dscales + [self.lower]
        return [layer for layer in seq if layer is not None]

    def forward(self, z):
        logdet = None
        for layer in self.layers():
            z, ld = layer.forward(z)
            if layer.kind == "sinusoidal":
                logdet = ld if logdet is None else ad.add(logdet, ld)
        if logdet is None:
            n = z.shape[0]
            logdet = ad.constant(np.zeros(n)) if isinstance(z, ad.Tensor) else np.zeros(n)
        return z, logdet

    def inverse(self, y, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, fallback=True,
                stats: InversionStats | None = None) -> np.ndarray:
        """Invert L, then the D-scales in reverse order, then U."""
        z = np.asarray(y, dtype=np.float64)
        if self.lower is not None:
            z = self.lower.inverse(z, tol, max_iter, fallback, stats)
        for layer in reversed(self.dscales):
            res = layer.inverse(z, tol, max_iter)
            if stats is not None:
                stats.add(layer.name, res)
            z = res.z
        if self.upper is not None:
            z = self.upper.inverse(z, tol, max_iter, fallback, stats)
        return z
