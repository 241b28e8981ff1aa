"""Residual temporal decoder and the bivariate Gaussian output head.

The decoder fuses the spectral unit output with the attention stream,
maps the observed horizon onto the prediction horizon by treating time
as a channel axis, then refines with a stack of kernel-3 temporal
convolutions wrapped in residual connections. The head reparameterizes
the five raw channels as (mean x, mean y, scale x, scale y,
correlation) with exp/tanh squashing so the implied covariance is
positive definite for any finite input.

Both the fusion and the residual updates are damped by fixed gains.
Training runs plain constant-step gradient descent, which is only
stable while the loss curvature stays below 2 / lr; the gains keep the
decoder path (where the curvature concentrates) inside that budget
without touching the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import DiffTensor

SIGMA_LOG_CLIP = 40.0
# likelihood curvature in the means grows like 1 / sigma^2, so letting
# the scales collapse on clean targets sends the largest Hessian
# eigenvalue through the gradient-descent stability bound; an additive
# floor (relative to the scene scale) bounds it while, unlike a clamp,
# keeping the scale gradient alive everywhere
SIGMA_FLOOR = 0.3
# same story in the correlation: curvature carries 1 / (1 - rho^2)
RHO_LIMIT = 0.5
# damped mean of the two streams rather than their sum
FUSION_GAIN = 0.44
RESIDUAL_GAIN = 0.7


@dataclass
class ResidualLayerParams:
    kernel: DiffTensor   # [1, 3, C, C]
    bias: DiffTensor     # [C]
    slope: DiffTensor    # [C] learnable rectifier slope


@dataclass
class DecoderParams:
    """Horizon mapping plus the residual refinement stack."""

    horizon_w: DiffTensor                    # [T_f, T_h]
    horizon_b: DiffTensor                    # [T_f]
    res_layers: list[ResidualLayerParams] = field(default_factory=list)
    out_proj_w: DiffTensor | None = None     # only for concat fusion
    out_proj_b: DiffTensor | None = None


def fuse_streams(y: DiffTensor, y_st: DiffTensor | None, mode: str = "add") -> DiffTensor:
    """Combine the unit output with the attention stream."""
    if y_st is None:
        return y
    if y.shape != y_st.shape:
        raise ShapeError(
            f"feature streams disagree: {y.shape} vs {y_st.shape}")
    if mode == "add":
        return T.mul(T.add(y, y_st), FUSION_GAIN)
    if mode == "concat":
        return T.concat([y, y_st], axis=2)
    raise ConfigError(f"unknown fusion mode {mode!r}")


def tcnn_decode(y: DiffTensor, y_st: DiffTensor | None, params: DecoderParams,
                fusion: str = "add") -> DiffTensor:
    """Raw five-channel forecast [T_f, N, 5] from fused features."""
    fused = fuse_streams(y, y_st, fusion)
    t_h, n, c = fused.shape
    if params.horizon_w.shape[1] != t_h:
        raise ShapeError(
            f"horizon map expects {params.horizon_w.shape[1]} observed steps, "
            f"got {t_h}")
    t_f = params.horizon_w.shape[0]
    # time-as-channels: raw[tf,n,c] = sum_th W[tf,th] fused[th,n,c] + b[tf]
    flat = T.reshape(fused, (t_h, n * c))
    mapped = T.matmul(params.horizon_w, flat)
    x = T.add(T.reshape(mapped, (t_f, n, c)),
              T.reshape(params.horizon_b, (t_f, 1, 1)))
    for layer in params.res_layers:
        if layer.kernel.shape[2] != c or layer.kernel.shape[3] != c:
            raise ShapeError(
                f"residual kernel {layer.kernel.shape} does not preserve "
                f"{c} channels")
        inner = T.prelu(T.add(T.conv_time(x, layer.kernel), layer.bias),
                        layer.slope)
        x = T.add(x, T.mul(inner, RESIDUAL_GAIN))
    if params.out_proj_w is not None:
        x = T.add(T.matmul(x, params.out_proj_w), params.out_proj_b)
    elif c != 5:
        raise ConfigError(
            f"decoder ends with {c} channels and no output projection")
    return x


@dataclass
class GaussianTrack:
    """Per-step bivariate Gaussian forecast, [T_f, N] fields."""

    mu_x: DiffTensor
    mu_y: DiffTensor
    sigma_x: DiffTensor
    sigma_y: DiffTensor
    rho: DiffTensor

    @property
    def horizon(self) -> int:
        return self.mu_x.shape[0]

    @property
    def num_agents(self) -> int:
        return self.mu_x.shape[1]

    def mean_track(self) -> np.ndarray:
        """Detached [T_f, N, 2] array of distribution means."""
        return np.stack([self.mu_x.data, self.mu_y.data], axis=2)


def gaussian_head(raw: DiffTensor, anchor: np.ndarray | None = None,
                  scale: float = 1.0) -> GaussianTrack:
    """Squash raw [T_f, N, 5] channels into valid Gaussian parameters.

    The mean channels are offsets; with `anchor` (the [N, 2] last
    observed positions) they are read as displacements from where each
    agent was last seen, which keeps the raw outputs near zero instead
    of asking the network to reproduce absolute coordinates. `scale` is
    the scene scale the inputs were normalized by; the standard
    deviations are expressed relative to it, so the floor means the
    same thing for a 2 m scene and a 200 m scene.
    """
    if raw.ndim != 3 or raw.shape[2] != 5:
        raise ShapeError(f"head expects [T_f, N, 5], got {raw.shape}")
    channels = [T.take(raw, (slice(None), slice(None), i)) for i in range(5)]
    mu_x, mu_y, raw_sx, raw_sy, raw_rho = channels
    if anchor is not None:
        anchor = np.asarray(anchor, dtype=np.float64)
        if anchor.shape != (raw.shape[1], 2):
            raise ShapeError(
                f"anchor must be [{raw.shape[1]}, 2], got {anchor.shape}")
        mu_x = T.add(mu_x, T.constant(anchor[:, 0]))
        mu_y = T.add(mu_y, T.constant(anchor[:, 1]))
    sigma_x = T.mul(T.add(
        T.exp(T.clip(raw_sx, -SIGMA_LOG_CLIP, SIGMA_LOG_CLIP)),
        SIGMA_FLOOR), scale)
    sigma_y = T.mul(T.add(
        T.exp(T.clip(raw_sy, -SIGMA_LOG_CLIP, SIGMA_LOG_CLIP)),
        SIGMA_FLOOR), scale)
    rho = T.mul(T.tanh(raw_rho), RHO_LIMIT)
    return GaussianTrack(mu_x, mu_y, sigma_x, sigma_y, rho)
