"""Full forecaster assembly: graphs -> spectral units -> attention -> decoder.

A Forecaster owns a flat named-parameter registry plus lightweight
dataclass views over it, so the optimizer sees one ordered list while
the layer code keeps its structured arguments. Parameter allocation
order is fixed (units, map encoder, attention, decoder) and every draw
comes from one seeded generator, which makes initialization a pure
function of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionStageParams, statt
from .decoder import (DecoderParams, GaussianTrack, ResidualLayerParams,
                      gaussian_head, tcnn_decode)
from .errors import ConfigError, ContractError, DataError, ShapeError
from .graphs import (DEFAULT_DISTANCE_EPS, ENV_CONV_CHANNELS, ENV_KERNEL_SIDE,
                     DEFAULT_EMBED_DIM, EnvEncoderParams, build_agent_graph,
                     encode_environment, normalized_laplacian,
                     normalized_laplacian_diff)
from .spectral import (DEFAULT_EPS_EIG, SpectralBasis, SpectralBlockParams,
                       eigh_sym, unit_forward)
from .tensor import DiffTensor

CHECKPOINT_FORMAT = 1
PRELU_INIT = 0.25
# the horizon map feeds the residual stack directly; starting it near
# zero keeps the initial forecast close to the anchor and the early
# loss surface gentle for constant-step descent
HORIZON_INIT_GAIN = 0.05


@dataclass
class ModelConfig:
    """Shape and wiring choices; everything the parameter set depends on."""

    t_h: int = 8
    t_f: int = 12
    n_max: int = 16
    in_channels: int = 2
    hidden_channels: int = 5
    num_units: int = 2
    kernel_len: int = 3
    num_heads: int = 2
    decoder_layers: int = 5
    embed_dim: int = DEFAULT_EMBED_DIM
    use_tgconv: bool = True
    use_image: bool = True
    use_statt: bool = True
    statt_mode: str = "sequential"
    fusion_mode: str = "add"
    env_grad: str = "broadened"
    distance_eps: float = DEFAULT_DISTANCE_EPS
    eps_eig: float = DEFAULT_EPS_EIG
    env_channels: tuple = ENV_CONV_CHANNELS

    def validate(self) -> None:
        for name in ("t_h", "t_f", "n_max", "in_channels", "hidden_channels",
                     "num_units", "num_heads", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if (not self.env_channels
                or any(int(c) < 1 for c in self.env_channels)):
            raise ConfigError("env_channels must be positive widths")
        if self.decoder_layers < 0:
            raise ConfigError("decoder_layers must be non-negative")
        if self.kernel_len < 1 or self.kernel_len % 2 == 0:
            raise ConfigError("kernel_len must be odd and positive")
        if self.statt_mode not in ("sequential", "parallel"):
            raise ConfigError(f"unknown statt_mode {self.statt_mode!r}")
        if self.fusion_mode not in ("add", "concat"):
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.env_grad not in ("broadened", "blocked"):
            raise ConfigError(f"unknown env_grad {self.env_grad!r}")
        if self.distance_eps <= 0 or self.eps_eig <= 0:
            raise ConfigError("distance_eps and eps_eig must be positive")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["env_channels"] = list(self.env_channels)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "env_channels" in d:
            d["env_channels"] = tuple(int(c) for c in d["env_channels"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


class ModelParams:
    """Ordered name -> DiffTensor registry of every learnable tensor."""

    def __init__(self):
        self._store: dict[str, DiffTensor] = {}

    def add(self, name: str, array: np.ndarray) -> DiffTensor:
        if name in self._store:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = T.parameter(array)
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> DiffTensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def tensors(self) -> list[DiffTensor]:
        return list(self._store.values())

    def count_values(self) -> int:
        return sum(t.data.size for t in self._store.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._store.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._store) - set(state)
        extra = set(state) - set(self._store)
        if missing or extra:
            raise DataError(
                f"parameter set mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        for name, tensor in self._store.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise DataError(
                    f"parameter {name!r} has shape {arr.shape}, "
                    f"expected {tensor.data.shape}")
            tensor.data[...] = arr


def _conv_kernel(rng, length, c_in, c_out):
    return T.glorot_uniform(rng, (1, length, c_in, c_out),
                            fan_in=length * c_in, fan_out=length * c_out)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases, 0.25 rectifier slopes."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams()
    hidden = config.hidden_channels

    def add_block(prefix: str, c_in: int) -> None:
        params.add(f"{prefix}.theta",
                   T.glorot_uniform(rng, (config.t_h, config.n_max, c_in, hidden),
                                    fan_in=config.n_max * c_in, fan_out=hidden))
        if config.use_tgconv:
            params.add(f"{prefix}.tg_sig.w",
                       _conv_kernel(rng, config.kernel_len, c_in, hidden))
            params.add(f"{prefix}.tg_sig.b", np.zeros(hidden))
            params.add(f"{prefix}.tg_gate.w",
                       _conv_kernel(rng, config.kernel_len, c_in, hidden))
            params.add(f"{prefix}.tg_gate.b", np.zeros(hidden))

    for u in range(config.num_units):
        c_in = config.in_channels if u == 0 else hidden
        add_block(f"unit{u}.agent", c_in)
        if config.use_image:
            add_block(f"unit{u}.env", c_in)
        if u + 1 < config.num_units:
            params.add(f"unit{u}.act", np.full(hidden, PRELU_INIT))

    if config.use_image:
        c_in = 1
        for i, c_out in enumerate(config.env_channels):
            side = ENV_KERNEL_SIDE
            params.add(f"env.conv{i}.w",
                       T.glorot_uniform(rng, (side, side, c_in, c_out),
                                        fan_in=side * side * c_in,
                                        fan_out=side * side * c_out))
            params.add(f"env.conv{i}.b", np.zeros(c_out))
            params.add(f"env.conv{i}.slope", np.full(c_out, PRELU_INIT))
            c_in = c_out
        params.add("env.embed.w",
                   T.glorot_uniform(rng, (c_in, config.embed_dim),
                                    fan_in=c_in, fan_out=config.embed_dim))
        params.add("env.embed.b", np.zeros(config.embed_dim))

    att_width = config.num_heads * hidden
    if config.use_statt:
        spatial_in = att_width if config.statt_mode == "sequential" else hidden
        for tag, c_in in (("t", hidden), ("s", spatial_in)):
            for h in range(config.num_heads):
                for proj in ("wq", "wk", "wv"):
                    params.add(f"att.{tag}.h{h}.{proj}",
                               T.glorot_uniform(rng, (c_in, hidden),
                                                fan_in=c_in, fan_out=hidden))
            params.add(f"att.{tag}.wh",
                       T.glorot_uniform(rng, (att_width, att_width),
                                        fan_in=att_width, fan_out=att_width))
        params.add("att.out.w",
                   T.glorot_uniform(rng, (att_width, hidden),
                                    fan_in=att_width, fan_out=hidden))

    dec_width = hidden
    if config.use_statt and config.fusion_mode == "concat":
        dec_width = 2 * hidden
    horizon = T.glorot_uniform(rng, (config.t_f, config.t_h),
                               fan_in=config.t_h, fan_out=config.t_f)
    horizon.data *= HORIZON_INIT_GAIN
    params.add("dec.horizon.w", horizon)
    params.add("dec.horizon.b", np.zeros(config.t_f))
    for i in range(config.decoder_layers):
        params.add(f"dec.res{i}.w", _conv_kernel(rng, 3, dec_width, dec_width))
        params.add(f"dec.res{i}.b", np.zeros(dec_width))
        params.add(f"dec.res{i}.slope", np.full(dec_width, PRELU_INIT))
    if dec_width != 5:
        params.add("dec.proj.w",
                   T.glorot_uniform(rng, (dec_width, 5), fan_in=dec_width,
                                    fan_out=5))
        params.add("dec.proj.b", np.zeros(5))
    return params


@dataclass
class ForecastOutput:
    """Everything the forward pass produces, pre- and post-head."""

    track: GaussianTrack
    raw: DiffTensor                 # [T_f, N, 5]
    unit_features: DiffTensor       # [T_h, N, hidden]
    attention_features: DiffTensor | None


class Forecaster:
    """End-to-end trajectory forecaster over one scene."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None,
                 seed: int = 0):
        config.validate()
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self._views = self._build_views()

    # -- parameter views ----------------------------------------------------

    def _block_view(self, prefix: str) -> SpectralBlockParams:
        p = self.params
        if self.config.use_tgconv:
            return SpectralBlockParams(p[f"{prefix}.theta"],
                                       p[f"{prefix}.tg_sig.w"],
                                       p[f"{prefix}.tg_sig.b"],
                                       p[f"{prefix}.tg_gate.w"],
                                       p[f"{prefix}.tg_gate.b"])
        return SpectralBlockParams(p[f"{prefix}.theta"], None, None, None, None)

    def _stage_view(self, tag: str) -> AttentionStageParams:
        p = self.params
        heads = range(self.config.num_heads)
        return AttentionStageParams(
            [p[f"att.{tag}.h{h}.wq"] for h in heads],
            [p[f"att.{tag}.h{h}.wk"] for h in heads],
            [p[f"att.{tag}.h{h}.wv"] for h in heads],
            p[f"att.{tag}.wh"])

    def _build_views(self) -> dict:
        cfg, p = self.config, self.params
        views: dict = {"units": []}
        for u in range(cfg.num_units):
            entry = {"agent": self._block_view(f"unit{u}.agent"),
                     "env": self._block_view(f"unit{u}.env") if cfg.use_image else None,
                     "act": p[f"unit{u}.act"] if u + 1 < cfg.num_units else None}
            views["units"].append(entry)
        if cfg.use_image:
            views["encoder"] = EnvEncoderParams(
                [p[f"env.conv{i}.w"] for i in range(len(cfg.env_channels))],
                [p[f"env.conv{i}.b"] for i in range(len(cfg.env_channels))],
                [p[f"env.conv{i}.slope"] for i in range(len(cfg.env_channels))],
                p["env.embed.w"], p["env.embed.b"])
        if cfg.use_statt:
            views["att_t"] = self._stage_view("t")
            views["att_s"] = self._stage_view("s")
            views["att_out"] = p["att.out.w"]
        layers = [ResidualLayerParams(p[f"dec.res{i}.w"], p[f"dec.res{i}.b"],
                                      p[f"dec.res{i}.slope"])
                  for i in range(cfg.decoder_layers)]
        views["decoder"] = DecoderParams(
            p["dec.horizon.w"], p["dec.horizon.b"], layers,
            out_proj_w=p["dec.proj.w"] if "dec.proj.w" in p else None,
            out_proj_b=p["dec.proj.b"] if "dec.proj.b" in p else None)
        return views

    # -- graph preparation --------------------------------------------------

    def _agent_bases(self, history: np.ndarray,
                     agent_ids: list[str] | None) -> tuple[DiffTensor, DiffTensor]:
        weights = build_agent_graph(history, eps=self.config.distance_eps,
                                    agent_ids=agent_ids)
        u_stack, lam_stack = [], []
        for w in weights:
            lap, _ = normalized_laplacian(w)
            basis = eigh_sym(lap, eps_eig=self.config.eps_eig, differentiate=False)
            u_stack.append(basis.u.data)
            lam_stack.append(basis.lambdas.data)
        return (T.constant(np.stack(u_stack)), T.constant(np.stack(lam_stack)))

    def _env_basis(self, image, affine, last_positions,
                   agent_ids) -> SpectralBasis:
        cfg = self.config
        weights = encode_environment(image, affine, last_positions,
                                     self._views["encoder"], agent_ids)
        if cfg.env_grad == "blocked":
            weights = T.constant(weights.data)
        n = weights.shape[0]
        if n == 1:
            lap = T.constant(np.eye(1))
        else:
            lap = normalized_laplacian_diff(weights)
        return eigh_sym(lap, eps_eig=cfg.eps_eig,
                        differentiate=cfg.env_grad == "broadened")

    # -- forward ------------------------------------------------------------

    def forward(self, history: np.ndarray, image: np.ndarray | None = None,
                affine: np.ndarray | None = None,
                agent_ids: list[str] | None = None) -> ForecastOutput:
        """Forecast from one observed window.

        history is [T_h, N, 2] in scene units; image and affine feed the
        map branch and may be omitted when it is disabled.
        """
        cfg = self.config
        history = np.asarray(history, dtype=np.float64)
        if history.ndim != 3 or history.shape[2] != 2:
            raise ShapeError(f"history must be [T_h, N, 2], got {history.shape}")
        if history.shape[0] != cfg.t_h:
            raise ShapeError(
                f"model expects {cfg.t_h} observed steps, scene has "
                f"{history.shape[0]}")

        agent_u, agent_lam = self._agent_bases(history, agent_ids)
        env_basis = None
        if cfg.use_image:
            env_basis = self._env_basis(image, affine, history[-1], agent_ids)

        # the spectral stack sees scene-normalized coordinates; absolute
        # offsets and raw scene extent carry no interaction information
        # and would blow up the feature (and thence sigma) scale
        origin = history[-1].mean(axis=0)
        centered = history - origin
        # 3x RMS keeps features well inside the unit ball; cold-start
        # NLL is very sensitive to the log-sigma channel scale
        scale = max(3.0 * float(np.sqrt((centered ** 2).mean())), 1e-3)
        feat: DiffTensor = T.constant(centered / scale)
        for entry in self._views["units"]:
            feat = unit_forward(feat, agent_u, agent_lam, entry["agent"],
                                env_basis, entry["env"], cfg.use_tgconv)
            if entry["act"] is not None:
                feat = T.prelu(feat, entry["act"])

        att_feat = None
        if cfg.use_statt:
            att_feat = statt(feat, self._views["att_t"], self._views["att_s"],
                             self._views["att_out"], mode=cfg.statt_mode)

        raw = tcnn_decode(feat, att_feat, self._views["decoder"],
                          fusion=cfg.fusion_mode if cfg.use_statt else "add")
        # means anchor at each agent's own last observed position, in the
        # spirit of displacement-based temporal decoders; scales are
        # relative to the scene scale. Both live in gaussian_head so the
        # same convention holds wherever raw channels are decoded.
        track = gaussian_head(raw, anchor=history[-1], scale=scale)
        return ForecastOutput(track=track, raw=raw,
                              unit_features=feat, attention_features=att_feat)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, config: ModelConfig,
                    params: ModelParams) -> None:
    """Versioned JSON checkpoint; floats round-trip exactly via repr."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "params": {name: {"shape": list(t.data.shape),
                          "data": [float(v) for v in t.data.ravel()]}
                   for name, t in params.items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams]:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(
            f"checkpoint format {payload.get('format')!r} not supported")
    config = ModelConfig.from_dict(payload["config"])
    params = init_params(config, seed=0)
    state = {}
    for name, entry in payload["params"].items():
        state[name] = np.array(entry["data"], dtype=np.float64).reshape(
            entry["shape"])
    params.load_state_dict(state)
    return config, params
