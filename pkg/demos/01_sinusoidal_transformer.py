"""One sinusoidal transformer: a monotone map whose residual is a contraction.

Run: python3 demos/01_sinusoidal_transformer.py
"""
import numpy as np

from sinflow import diffengine as ad
from sinflow.layers import SinusoidalLayer

store = ad.ParamStore()
layer = SinusoidalLayer(D=1, K=3, store=store, prefix="demo", a_init=[0.5, 1.5, 4.0])

# at initialization alpha = 0, so the layer is exactly the identity
z = np.linspace(-3, 3, 7)[:, None]
y, logdet = layer.forward(z)
print("identity at init:", np.array_equal(y, z), "logdet", logdet.ravel())

# push alpha towards 1 and give the sinusoids some phase
store["demo.alpha_raw"].data[:] = 2.0     # tanh(2) ~ 0.964
store["demo.b"].data[:] = [[0.3, -1.0, 2.0]]
store["demo.w_logits"].data[:] = [[0.0, 1.0, -0.5]]
print("max |alpha| =", round(layer.max_alpha(), 4))

grid = np.linspace(-4, 4, 2001)[:, None]
slope = layer.derivative(grid).ravel()
print(f"slope range on [-4, 4]: [{slope.min():.4f}, {slope.max():.4f}]  (always within [1-alpha, 1+alpha])")

# a staircase: flat where the slope dips, steep where it peaks
y, _ = layer.forward(grid)
for t in (-3, -1.5, 0, 1.5, 3):
    i = np.argmin(np.abs(grid[:, 0] - t))
    print(f"  z = {t:+.1f}  ->  y = {y[i, 0]:+.4f}   dy/dz = {slope[i]:.4f}")

# inversion by fixed-point iteration; the error shrinks by at least max|alpha| per step
target = np.array([[0.7]])
res = layer.inverse(target, tol=1e-12, max_iter=1000, keep_trace=True)
exact = res.z
errs = [abs(float(zz[0, 0] - exact[0, 0])) for zz in res.trace]
print(f"\ninverting y = 0.7: {res.iterations} iterations, converged={res.converged}")
for j in range(0, min(len(errs) - 1, 40), 5):
    ratio = errs[j + 1] / errs[j] if errs[j] > 0 else float("nan")
    print(f"  iter {j:3d}  |z_j - z*| = {errs[j]:.3e}   ratio {ratio:.3f}")
print("round trip error:", abs(float(layer.forward(exact)[0][0, 0]) - 0.7))
