"""Graph construction: agent adjacency, map encoder, normalized Laplacian.

Two kinds of weight matrices feed the spectral layers. The agent graph
is rebuilt at every observed timestep from inverse pairwise distances,
so nearby agents couple strongly; it depends only on scene data and is
treated as a constant. The map graph is produced by a small learned
convolutional encoder over a grayscale raster: each agent's embedding is
read off the feature map at its last observed position and pairwise
embedding similarities, squashed through a sigmoid, become edge weights.
That path is fully differentiable so training can shape the map graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError, ShapeError
from .tensor import DiffTensor

DEFAULT_DISTANCE_EPS = 1e-6
LAPLACIAN_SYMMETRY_TOL = 1e-12

ENV_CONV_CHANNELS = (8, 16, 16)
ENV_KERNEL_SIDE = 3
DEFAULT_EMBED_DIM = 16


def inverse_distance_weights(positions: np.ndarray, eps: float = DEFAULT_DISTANCE_EPS) -> np.ndarray:
    """Symmetric inverse-distance weights for one timestep.

    positions is [N, 2]. Off-diagonal entries are 1 / max(d_ij, eps)
    with d_ij the Euclidean distance, the diagonal stays zero. The eps
    floor keeps coincident agents finite instead of blowing up.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ShapeError(f"positions must be [N, 2], got {positions.shape}")
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    weights = 1.0 / np.maximum(dist, eps)
    np.fill_diagonal(weights, 0.0)
    return weights


def build_agent_graph(history: np.ndarray, eps: float = DEFAULT_DISTANCE_EPS,
                      agent_ids: list[str] | None = None) -> list[np.ndarray]:
    """Per-timestep inverse-distance weight matrices for a history block.

    history is [T, N, 2]. Non-finite coordinates are a data problem and
    the error names the offending agent and timestep.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 3 or history.shape[2] != 2:
        raise ShapeError(f"history must be [T, N, 2], got {history.shape}")
    bad = np.argwhere(~np.isfinite(history))
    if bad.size:
        t, n, _ = bad[0]
        label = agent_ids[n] if agent_ids else str(n)
        raise DataError(f"non-finite position for agent {label} at timestep {t}")
    return [inverse_distance_weights(history[t], eps=eps) for t in range(history.shape[0])]


def normalized_laplacian(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric normalized Laplacian of a weight matrix, plus degrees.

    L = I - D^(-1/2) W D^(-1/2) with D the diagonal degree matrix; rows
    with zero degree keep their identity row (their scaling is defined
    as zero). The scaling grid is formed as an outer product so the
    result is symmetric down to the last bit. Eigenvalues of the result
    always lie in [0, 2].
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"weight matrix must be square, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("weight matrix contains non-finite entries")
    if np.any(w < 0):
        raise ContractError("weight matrix has negative entries")
    asym = float(np.max(np.abs(w - w.T))) if w.size else 0.0
    if asym > LAPLACIAN_SYMMETRY_TOL:
        raise ContractError(f"weight matrix is asymmetric by {asym:.3e}")
    degrees = w.sum(axis=1)
    scale = np.where(degrees > 0, degrees, 1.0) ** -0.5
    scale = np.where(degrees > 0, scale, 0.0)
    lap = np.eye(w.shape[0]) - w * np.outer(scale, scale)
    return lap, degrees


def normalized_laplacian_diff(weights: DiffTensor) -> DiffTensor:
    """Differentiable normalized Laplacian for strictly positive degrees.

    Mirrors normalized_laplacian but stays on the tape. The map graph
    guarantees positive degrees for two or more agents because sigmoid
    weights are strictly positive.
    """
    n = weights.shape[0]
    if weights.ndim != 2 or weights.shape[1] != n:
        raise ShapeError(f"weight matrix must be square, got {weights.shape}")
    if n >= 2 and float(weights.data.sum(axis=1).min()) <= 0.0:
        raise ContractError("differentiable Laplacian needs strictly positive degrees")
    degrees = T.sum_(weights, axis=1)
    scale = T.pow_scalar(degrees, -0.5)
    grid = T.mul(T.reshape(scale, (n, 1)), T.reshape(scale, (1, n)))
    return T.sub(T.constant(np.eye(n)), T.mul(weights, grid))


@dataclass
class EnvEncoderParams:
    """Learned pieces of the map encoder."""

    conv_w: list[DiffTensor]    # three [3, 3, c_in, c_out] kernels
    conv_b: list[DiffTensor]    # matching [c_out] biases
    conv_slope: list[DiffTensor]
    embed_w: DiffTensor         # [last_channels, embed_dim]
    embed_b: DiffTensor         # [embed_dim]

    @property
    def embed_dim(self) -> int:
        return self.embed_w.shape[1]


def world_to_pixel(positions: np.ndarray, affine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply a 2x3 affine map to world coordinates, giving (col, row)."""
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (2, 3):
        raise ShapeError(f"affine must be [2, 3], got {affine.shape}")
    positions = np.asarray(positions, dtype=np.float64)
    cols = affine[0, 0] * positions[:, 0] + affine[0, 1] * positions[:, 1] + affine[0, 2]
    rows = affine[1, 0] * positions[:, 0] + affine[1, 1] * positions[:, 1] + affine[1, 2]
    return cols, rows


def encode_environment(image: np.ndarray, affine: np.ndarray, last_positions: np.ndarray,
                       params: EnvEncoderParams,
                       agent_ids: list[str] | None = None) -> DiffTensor:
    """Map graph weights from a grayscale raster and agent positions.

    The raster passes through three same-padded 3x3 convolutions with a
    learnable leaky rectifier after each; every agent's feature vector
    is sampled bilinearly at its last observed position (mapped through
    the affine world-to-pixel transform) and projected to an embedding.
    Embeddings are centered across agents and normalized to unit RMS
    before the pairwise dot products, so only the part of the map
    signature that differs between agents shapes the graph and the
    weights do not depend on the magnitude of the raw features. The
    similarities pass through 0.5 * (s + sqrt(s^2 + 1)), a smooth
    strictly positive map with no flat regions, so the weight matrix is
    symmetric and positive off the diagonal (diagonal forced to zero)
    and every edge keeps a live gradient. A squashing map such as a
    sigmoid is deliberately avoided: once it saturates, all weights
    collapse toward a common value, the normalized Laplacian spectrum
    degenerates, and the eigenvector gradients blow up.
    """
    if image is None:
        raise ConfigError("map branch is enabled but the scene has no image")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"image must be a grayscale [H, W] raster, got {image.shape}")
    n = len(last_positions)
    if n == 1:
        # a single agent has no pairwise structure; the branch degrades
        # to a constant empty graph with no gradient to the encoder
        return T.constant(np.zeros((1, 1)))
    h, w = image.shape
    cols, rows = world_to_pixel(last_positions, affine)
    for idx in range(n):
        if not (0.0 <= cols[idx] <= w - 1 and 0.0 <= rows[idx] <= h - 1):
            label = agent_ids[idx] if agent_ids else str(idx)
            raise DataError(
                f"agent {label} maps to pixel ({cols[idx]:.2f}, {rows[idx]:.2f}) "
                f"outside the {w}x{h} image")
    feat = T.constant(image[:, :, None])
    for conv_w, conv_b, slope in zip(params.conv_w, params.conv_b, params.conv_slope):
        feat = T.prelu(T.add(T.conv2d(feat, conv_w), conv_b), slope)
    sampled = T.bilinear_sample(feat, cols, rows)
    z = T.add(T.matmul(sampled, params.embed_w), params.embed_b)
    centered = T.add(z, T.mul(T.mean(z, axis=0, keepdims=True), -1.0))
    rms = T.sqrt(T.mean(T.mul(centered, centered)))
    unit = T.mul(centered, T.pow_scalar(T.add(rms, 1e-6), -1.0))
    sim = T.mul(T.matmul(unit, T.transpose(unit, (1, 0))),
                1.0 / math.sqrt(params.embed_dim))
    weights = T.mul(T.add(sim, T.sqrt(T.add(T.mul(sim, sim), 1.0))), 0.5)
    return T.mul(weights, T.constant(1.0 - np.eye(n)))
