"""Train on a 2D toy, then sample, export a density grid and run the reconstruction sweep.

Run: python3 demos/03_toy_2d.py [rings|checkerboard|two_moons|eight_gaussians|two_spirals] [steps]
Writes into runs/demo_<name>/.  The default 2000 steps take a couple of minutes.
"""
import sys
from pathlib import Path

import numpy as np

from sinflow.cli import main
from sinflow.data import load_csv

name = sys.argv[1] if len(sys.argv) > 1 else "rings"
steps = sys.argv[2] if len(sys.argv) > 2 else "2000"
root = Path(__file__).resolve().parent.parent
out = root / "runs" / f"demo_{name}"
ckpt = str(out / "final.ckpt.json")

main(["train", "--config", str(root / "configs" / "checkerboard.json"), "--dataset", name,
      "--steps", steps, "--out", str(out)])
main(["sample", "--checkpoint", ckpt, "--n", "2000", "--seed", "1", "--out", str(out / "samples.csv")])
main(["density-grid", "--checkpoint", ckpt, "--bounds", "-4", "4", "-4", "4",
      "--resolution", "81", "--out", str(out / "density.csv")])
main(["recon-analysis", "--checkpoint", ckpt, "--n", "500", "--tol", "1e-8", "--out", str(out / "recon.csv")])

# crude terminal rendering of the learned density
g = load_csv(out / "density.csv", has_header=True).x
dens = np.exp(g[:, 2]).reshape(81, 81).T[::-1]
shades = " .:-=+*#%@"
print()
for row in dens[::4]:
    print("".join(shades[min(9, int(9 * v / dens.max() + 0.5))] for v in row[::2]))
