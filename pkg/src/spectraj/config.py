"""Flat run configuration: defaults, key=value files, typed overrides.

One RunConfig covers every knob the library exposes so a run can log
its fully resolved settings. Precedence is defaults < config file <
command-line overrides; unknown keys are rejected loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import LossConfig, TrainConfig

ABLATIONS = ("base", "+tgconv", "+image", "+statt", "full")


@dataclass
class RunConfig:
    # model geometry
    t_h: int = 8
    t_f: int = 12
    n_max: int = 16
    hidden_channels: int = 5
    num_units: int = 2
    kernel_len: int = 3
    num_heads: int = 2
    decoder_layers: int = 5
    embed_dim: int = 16
    statt_mode: str = "sequential"
    fusion_mode: str = "add"
    env_grad: str = "broadened"
    ablate: str = "full"
    distance_eps: float = 1e-6
    eps_eig: float = 1e-8
    # optimization
    lr: float = 0.01
    epochs: int = 250
    batch_size: int = 16
    lambda_dist: float = 1.0
    max_grad_norm: float = 5.0
    seed: int = 0
    # evaluation
    k_list: tuple = (1, 5, 10, 20)
    # synthetic data
    num_scenes: int = 200
    num_agents: int = 3
    dt: float = 0.4
    noise: float = 0.05
    extent: float = 12.0
    with_image: bool = True
    image_size: int = 64
    min_separation: float = 0.8
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2
    split_seed: int = 0
    # paths (never embedded in artifacts)
    dataset: str = ""
    out: str = "out"
    checkpoint: str = ""

    def validate(self) -> None:
        if self.ablate not in ABLATIONS:
            raise ConfigError(
                f"unknown ablate value {self.ablate!r}; "
                f"expected one of {', '.join(ABLATIONS)}")
        if not self.k_list:
            raise ConfigError("k_list must not be empty")
        ks = list(self.k_list)
        if any(k < 1 for k in ks) or sorted(set(ks)) != ks:
            raise ConfigError(
                "k_list must be strictly increasing positive integers")
        if self.num_scenes < 1:
            raise ConfigError("num_scenes must be >= 1")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {ratios}")
        # geometry/optimizer ranges are enforced by the configs they feed
        self.to_model_config().validate()
        self.to_train_config().validate()

    def ablation_flags(self) -> dict:
        if self.ablate == "full":
            return {"use_tgconv": True, "use_image": True, "use_statt": True}
        return {
            "use_tgconv": self.ablate == "+tgconv",
            "use_image": self.ablate == "+image",
            "use_statt": self.ablate == "+statt",
        }

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            t_h=self.t_h, t_f=self.t_f, n_max=self.n_max,
            hidden_channels=self.hidden_channels,
            num_units=self.num_units, kernel_len=self.kernel_len,
            num_heads=self.num_heads, decoder_layers=self.decoder_layers,
            embed_dim=self.embed_dim, statt_mode=self.statt_mode,
            fusion_mode=self.fusion_mode, env_grad=self.env_grad,
            distance_eps=self.distance_eps, eps_eig=self.eps_eig,
            **self.ablation_flags())

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed,
                           lambda_dist=self.lambda_dist,
                           max_grad_norm=self.max_grad_norm)

    def to_loss_config(self) -> LossConfig:
        return LossConfig(lambda_dist=self.lambda_dist)

    def resolved(self, include_paths: bool = False) -> dict:
        """Every setting as plain JSON-friendly values, sorted by key.

        Paths are excluded by default so artifacts stay byte-identical
        across runs that only differ in where they write.
        """
        skip = () if include_paths else ("dataset", "out", "checkpoint")
        out = {}
        for field in dataclasses.fields(self):
            if field.name in skip:
                continue
            value = getattr(self, field.name)
            out[field.name] = list(value) if isinstance(value, tuple) else value
        return dict(sorted(out.items()))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, text: str):
    """Parse one raw string into the field's declared type."""
    kind = _FIELDS[name].type
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "tuple":
            parts = [p for p in text.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    """Return a copy of cfg with raw-string overrides applied."""
    updates = {}
    for name, text in pairs.items():
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key {name!r}")
        updates[name] = _coerce(name, text)
    return dataclasses.replace(cfg, **updates)


def parse_config_file(path) -> dict[str, str]:
    """Read a key=value file; returns raw strings keyed by field name."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(
                f"{path.name} line {lineno}: expected key = value, "
                f"got {line!r}")
        if key not in _FIELDS:
            raise ConfigError(
                f"{path.name} line {lineno}: unknown config key {key!r}")
        if key in pairs:
            raise ConfigError(
                f"{path.name} line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then file settings, then explicit overrides."""
    cfg = RunConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_config_file(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg
