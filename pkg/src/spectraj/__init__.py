"""Spectral-temporal graph forecasting for multi-agent trajectories.

The package turns short observed position histories of interacting
agents, optionally paired with a grayscale map of the surroundings, into
probabilistic future trajectories. Interactions are modeled on two
graphs, one rebuilt from inverse pairwise distances at every observed
timestep and one derived from learned map embeddings; signals are
filtered in the Laplacian eigenbasis of each graph, convolved over time
with a gated kernel, refined by attention over time and agents, and
decoded into per-step bivariate Gaussians.

Layout:
    tensor     float64 autodiff core every learnable piece runs on
    spectral   Jacobi eigensolver, graph Fourier transforms, filters
    graphs     agent adjacency, map encoder, normalized Laplacian
    attention  multi-head attention over time, then over agents
    decoder    residual temporal decoder and the Gaussian output head
    model      parameter registry and the assembled forecaster
    training   losses, SGD loop, sampling, displacement metrics
    scene      scene file format, synthetic scenarios, dataset splits
    config     flat run configuration with file parsing
    verify     finite-difference verification harness
    cli        command line entry points
"""

from .errors import (CapacityError, ConfigError, ContractError, DataError,
                     NumericError, ShapeError, SpectrajError)
from .tensor import DiffTensor, backward, grad_check, no_grad, zero_grads

__all__ = [
    "CapacityError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DiffTensor",
    "NumericError",
    "ShapeError",
    "SpectrajError",
    "backward",
    "grad_check",
    "no_grad",
    "zero_grads",
]

__version__ = "0.1.0"
