import numpy as np
import pytest

from sinflow import diffengine as ad
from sinflow.conditioners import A_FLOOR, ALPHA_CAP, inverse_softplus
from sinflow.model import FlowModel, ModelSpec


def set_sinusoidal(layer, a, b, w_logits, alpha, d):
    """Set a SinusoidalLayer's raw parameters so the constrained values are as given."""
    p = layer.params
    p.a_raw.data = np.vectorize(lambda v: inverse_softplus(v - A_FLOOR))(
        np.broadcast_to(np.asarray(a, float), p.a_raw.shape)).astype(float)
    p.b.data = np.broadcast_to(np.asarray(b, float), p.b.shape).copy()
    p.w_logits.data = np.broadcast_to(np.asarray(w_logits, float), p.w_logits.shape).copy()
    p.alpha_raw.data = np.arctanh(np.broadcast_to(np.asarray(alpha, float), p.alpha_raw.shape) / ALPHA_CAP)
    p.d.data = np.broadcast_to(np.asarray(d, float), p.d.shape).copy()


def randomize(store: ad.ParamStore, rng: np.random.Generator, scale: float = 0.5):
    """Overwrite every parameter with N(0, scale^2) draws (alpha_raw gets N(0, 1))."""
    for name, p in store:
        s = 1.0 if name.endswith("alpha_raw") else scale
        p.data = rng.normal(0.0, s, size=p.shape)


def random_model(D, blocks=2, dscales=2, K=3, hidden=(8,), seed=0, scale=0.5, shifts=True):
    m = FlowModel(ModelSpec(dim=D, blocks=blocks, dscales=dscales, K=K, hidden=list(hidden),
                            shifts=shifts, init_seed=seed))
    randomize(m.store, np.random.default_rng(seed + 1000), scale)
    return m


def fd_jacobian(f, z, h=1e-5):
    """Central-difference Jacobian of a row-wise map f at each row of z: [n, D, D]."""
    z = np.asarray(z, dtype=float)
    D = z.shape[1]
    J = np.zeros((z.shape[0], D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = h
        J[:, :, j] = (f(z + e) - f(z - e)) / (2 * h)
    return J


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# verdict lines filled in by test_acceptance, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
