"""Sinusoidal Flow density estimation on a small numpy autodiff engine."""
from .data import Dataset, MixtureSpec, Standardizer, gen_mixture1d, gen_toy2d, load_csv, split
from .model import FlowModel, ModelSpec, base_logpdf
from .training import TrainConfig, train

__all__ = ["Dataset", "MixtureSpec", "Standardizer", "gen_mixture1d", "gen_toy2d", "load_csv",
           "split", "FlowModel", "ModelSpec", "base_logpdf", "TrainConfig", "train"]
__version__ = "0.1.0"
