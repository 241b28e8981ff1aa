"""Two-stage multi-head attention over the spectral unit output.

The temporal stage lets every agent attend over its own history steps;
the spatial stage lets every timestep attend across agents. Both reuse
one scaled dot-product core that treats the leading axis as a batch.
Stage outputs concatenate the heads, so their channel width is
N_h * d_out; a final learned projection brings that back down to the
unit channel width so the decoder can add the two feature streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import DiffTensor


@dataclass
class AttentionStageParams:
    """Per-head projections plus the head-mixing matrix for one stage."""

    wq: list[DiffTensor]   # each [c_in, d_k]
    wk: list[DiffTensor]   # each [c_in, d_k]
    wv: list[DiffTensor]   # each [c_in, d_out]
    wh: DiffTensor         # [N_h*d_out, N_h*d_out]

    @property
    def num_heads(self) -> int:
        return len(self.wq)

    @property
    def in_channels(self) -> int:
        return self.wq[0].shape[0]


def _mha(x: DiffTensor, params: AttentionStageParams, return_weights: bool = False):
    """Multi-head scaled dot-product attention over the middle axis.

    x is [B, S, c_in]; every batch row attends over its own S positions.
    """
    if x.ndim != 3:
        raise ShapeError(f"attention input must be [B, S, C], got {x.shape}")
    if x.shape[2] != params.in_channels:
        raise ShapeError(
            f"attention input has {x.shape[2]} channels, projections expect "
            f"{params.in_channels}")
    if params.num_heads < 1:
        raise ConfigError("attention needs at least one head")
    d_k = params.wq[0].shape[1]
    heads = []
    weight_mats = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = T.matmul(x, wq)
        k = T.matmul(x, wk)
        v = T.matmul(x, wv)
        logits = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d_k))
        weights = T.softmax(logits, axis=-1)
        heads.append(T.matmul(weights, v))
        weight_mats.append(weights)
    out = T.matmul(T.concat(heads, axis=2), params.wh)
    if return_weights:
        return out, weight_mats
    return out


def temporal_attention(y: DiffTensor, params: AttentionStageParams,
                       return_weights: bool = False):
    """Each agent attends over its own time axis. y is [T, N, C]."""
    swapped = T.transpose(y, (1, 0, 2))
    result = _mha(swapped, params, return_weights)
    if return_weights:
        out, weights = result
        return T.transpose(out, (1, 0, 2)), weights
    return T.transpose(result, (1, 0, 2))


def spatial_attention(y: DiffTensor, params: AttentionStageParams,
                      return_weights: bool = False):
    """Each timestep attends across agents. y is [T, N, C]."""
    return _mha(y, params, return_weights)


def statt(y: DiffTensor, temporal_params: AttentionStageParams,
          spatial_params: AttentionStageParams, out_w: DiffTensor,
          mode: str = "sequential") -> DiffTensor:
    """Spatio-temporal attention feature stream.

    sequential: the spatial stage consumes the temporal stage's output,
    so its projections must expect N_h*d_out input channels. parallel:
    both stages read y directly and their outputs are summed. Either
    way the concatenated-head width is projected back down by out_w so
    the result can be added to the unit output.
    """
    if mode == "sequential":
        mixed = spatial_attention(temporal_attention(y, temporal_params),
                                  spatial_params)
    elif mode == "parallel":
        mixed = T.add(temporal_attention(y, temporal_params),
                      spatial_attention(y, spatial_params))
    else:
        raise ConfigError(f"unknown statt mode {mode!r}")
    return T.matmul(mixed, out_w)
