"""Conditioners: MADE-style masked networks for the shift layers and free
(input-independent) constrained parameters for the sinusoidal D-scales."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as ad

FORWARD = "forward"
REVERSE = "reverse"

A_FLOOR = 1e-4  # keeps a bounded away from 0; the transformer divides by a
ALPHA_CAP = 1.0 - 1e-9  # tanh rounds to exactly 1.0 for inputs beyond ~19


@dataclass(frozen=True)
class MaskSet:
    """Per-layer 0/1 masks in ``(fan_in, fan_out)`` layout, i.e. for ``x @ (W * M)``."""

    masks: tuple
    ordering: str

    def connectivity(self) -> np.ndarray:
        """End-to-end path counts; entry [j, i] > 0 iff output i can see input j."""
        c = self.masks[0]
        for m in self.masks[1:]:
            c = c @ m
        return c


def build_made_masks(D: int, hidden_sizes, ordering: str = FORWARD) -> MaskSet:
    """Deterministic MADE masks.

    Inputs get degrees 1..D (mirrored for reverse ordering), hidden unit ``h``
    gets degree ``1 + h mod (D - 1)``, and output ``i`` may only see hidden
    units of strictly smaller degree, so it depends on strictly preceding
    inputs (forward) or strictly succeeding ones (reverse).
    """
    if D < 1:
        raise ValueError(f"build_made_masks: D must be >= 1, got {D}")
    if ordering not in (FORWARD, REVERSE):
        raise ValueError(f"build_made_masks: ordering must be 'forward' or 'reverse', got {ordering!r}")
    hidden_sizes = list(hidden_sizes)
    if any(h < 1 for h in hidden_sizes):
        raise ValueError(f"build_made_masks: hidden sizes must be >= 1, got {hidden_sizes}")

    in_deg = np.arange(1, D + 1)
    if ordering == REVERSE:
        in_deg = in_deg[::-1]
    degrees = [in_deg]
    for h in hidden_sizes:
        degrees.append(1 + np.arange(h) % (D - 1) if D > 1 else np.ones(h, dtype=int))

    masks = [(d_out[None, :] >= d_in[:, None]).astype(np.float64)
             for d_in, d_out in zip(degrees[:-1], degrees[1:])]
    masks.append((in_deg[None, :] > degrees[-1][:, None]).astype(np.float64))
    return MaskSet(tuple(masks), ordering)


class MaskedConditioner:
    """Masked MLP producing one shift per input component.

    Hidden layers use tanh.  The output layer starts at zero so the shift is
    exactly 0 at initialisation.
    """

    def __init__(self, D: int, hidden_sizes, ordering: str, store: ad.ParamStore,
                 prefix: str, rng: np.random.Generator):
        self.D = D
        self.ordering = ordering
        self.maskset = build_made_masks(D, hidden_sizes, ordering)
        self.weights, self.biases = [], []
        n_layers = len(self.maskset.masks)
        for k, m in enumerate(self.maskset.masks):
            fan_in, fan_out = m.shape
            if k == n_layers - 1:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(store.add(f"{prefix}.W{k}", w))
            self.biases.append(store.add(f"{prefix}.b{k}", np.zeros(fan_out)))

    def __call__(self, z):
        return masked_forward(self, z)

    def numpy_params(self):
        """Masked weights and biases as plain arrays, for repeated evaluation."""
        return [(w.data * m, b.data) for w, b, m in zip(self.weights, self.biases, self.maskset.masks)]


def masked_forward(cond: MaskedConditioner, z):
    """Shifts for a ``batch x D`` input; accepts a Tensor or a plain array."""
    width = z.shape[-1]
    if width != cond.D:
        raise ValueError(f"masked_forward: input width {width} does not match D={cond.D}")
    h = z
    last = len(cond.weights) - 1
    for k, (w, b, m) in enumerate(zip(cond.weights, cond.biases, cond.maskset.masks)):
        w_eff = ad.mask_mul(w, m) if isinstance(z, ad.Tensor) else w.data * m
        bias = b if isinstance(z, ad.Tensor) else b.data
        h = ad.add(ad.matmul(h, w_eff), bias)
        if k < last:
            h = ad.tanh(h)
    return h


def apply_masked(params, z: np.ndarray) -> np.ndarray:
    """Evaluate a conditioner from :meth:`MaskedConditioner.numpy_params`."""
    h = z
    for k, (w, b) in enumerate(params):
        h = h @ w + b
        if k < len(params) - 1:
            h = np.tanh(h)
    return h


def inverse_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class Constrained:
    a: object
    b: object
    w: object
    alpha: object
    d: object

    def numpy(self) -> "Constrained":
        return Constrained(*(ad.evaluate(v) for v in (self.a, self.b, self.w, self.alpha, self.d)))


class IndependentParams:
    """Unconstrained raw parameters of one sinusoidal transformer.

    ``a_raw``, ``b``, ``w_logits`` are ``D x K``; ``alpha_raw`` and ``d`` are
    length ``D``.  ``a_init`` may be a scalar or a length-K array of initial
    frequencies; ``alpha_raw`` starts at 0 so the transformer is the identity.
    """

    def __init__(self, D: int, K: int, store: ad.ParamStore, prefix: str, a_init=1.0):
        a0 = np.broadcast_to(np.asarray(a_init, dtype=np.float64), (K,))
        self.a_raw = store.add(f"{prefix}.a_raw",
                               np.tile([inverse_softplus(v - A_FLOOR) for v in a0], (D, 1)))
        self.b = store.add(f"{prefix}.b", np.zeros((D, K)))
        self.w_logits = store.add(f"{prefix}.w_logits", np.zeros((D, K)))
        self.alpha_raw = store.add(f"{prefix}.alpha_raw", np.zeros(D))
        self.d = store.add(f"{prefix}.d", np.zeros(D))
        self.D, self.K = D, K


def constrain(params: IndependentParams) -> Constrained:
    """Map raw parameters to a > 0, rows of w on the simplex, |alpha| < 1."""
    return Constrained(
        a=ad.softplus(params.a_raw) + A_FLOOR,
        b=params.b,
        w=ad.softmax(params.w_logits),
        alpha=ad.mul(ad.tanh(params.alpha_raw), ALPHA_CAP),
        d=params.d,
    )
