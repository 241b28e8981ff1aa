"""Losses, optimizer step, hypothesis sampling, metrics, and the loops.

The probabilistic loss is the negative log-likelihood of the target
track under the forecast's bivariate Gaussians, summed over the horizon
and averaged over agents so its scale does not grow with crowd size.
The distance loss penalizes squared error of the predicted means. Both
feed plain SGD. Evaluation draws K correlated samples per step through
the closed-form 2x2 Cholesky factor and reports best-of-K displacement
errors; sample sets for different K are prefixes of one stream, which
makes the metric provably non-increasing in K.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .decoder import GaussianTrack
from .errors import ContractError, DataError, NumericError
from .model import Forecaster, save_checkpoint
from .tensor import DiffTensor

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass
class LossConfig:
    lambda_dist: float = 1.0

    def validate(self) -> None:
        if self.lambda_dist < 0:
            raise ContractError("lambda_dist must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 250
    batch_size: int = 16
    seed: int = 0
    lambda_dist: float = 1.0
    # cold-start NLL gradients spike when a sigma channel undershoots; a
    # global-norm cap keeps plain SGD from being thrown off early. The
    # cap must be loose enough to stop binding once training settles:
    # while it binds, steps have constant length and the loss orbits
    # instead of converging
    max_grad_norm: float = 30.0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.lambda_dist < 0:
            raise ContractError("lambda_dist must be non-negative")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ContractError("max_grad_norm must be positive or None")


def _target_channels(track: GaussianTrack, target: np.ndarray):
    target = np.asarray(target, dtype=np.float64)
    want = (track.horizon, track.num_agents, 2)
    if target.shape != want:
        raise ContractError(f"target shape {target.shape}, expected {want}")
    if not np.all(np.isfinite(target)):
        raise DataError("target contains non-finite positions")
    return T.constant(target[:, :, 0]), T.constant(target[:, :, 1])


def loss_prob(track: GaussianTrack, target: np.ndarray) -> DiffTensor:
    """Horizon-summed, agent-averaged bivariate Gaussian NLL."""
    tx, ty = _target_channels(track, target)
    dx = T.sub(tx, track.mu_x)
    dy = T.sub(ty, track.mu_y)
    zx = T.div(dx, track.sigma_x)
    zy = T.div(dy, track.sigma_y)
    one_m = T.sub(T.constant(1.0), T.mul(track.rho, track.rho))
    quad = T.add(T.add(T.mul(zx, zx), T.mul(zy, zy)),
                 T.mul(T.mul(T.mul(track.rho, zx), zy), -2.0))
    nll = T.add(
        T.add(T.add(T.log(track.sigma_x), T.log(track.sigma_y)),
              T.add(T.mul(T.log(one_m), 0.5), T.constant(LOG_TWO_PI))),
        T.div(quad, T.mul(one_m, 2.0)))
    return T.mul(T.sum_(nll), 1.0 / track.num_agents)


def loss_dist(track: GaussianTrack, target: np.ndarray) -> DiffTensor:
    """Mean squared displacement of the predicted means."""
    tx, ty = _target_channels(track, target)
    dx = T.sub(tx, track.mu_x)
    dy = T.sub(ty, track.mu_y)
    sq = T.add(T.mul(dx, dx), T.mul(dy, dy))
    return T.mul(T.sum_(sq), 1.0 / (track.horizon * track.num_agents))


def loss_total(track: GaussianTrack, target: np.ndarray,
               cfg: LossConfig | None = None) -> DiffTensor:
    cfg = cfg or LossConfig()
    cfg.validate()
    return T.add(loss_prob(track, target),
                 T.mul(loss_dist(track, target), cfg.lambda_dist))


def sgd_step(params, lr: float, trainable: set[str] | None = None) -> None:
    """In-place p <- p - lr * grad over a ModelParams registry.

    With trainable=None every parameter must carry a gradient; a missing
    one is a wiring bug. Configurations that freeze a branch on purpose
    (blocked environment gradients, ablations) pass the set of names that
    are expected to train, and only those are required and updated.
    """
    for name, tensor in params.items():
        if trainable is not None and name not in trainable:
            continue
        if tensor.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        tensor.data -= lr * tensor.grad


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm. Parameters without a gradient are the
    caller's problem; sgd_step reports them by name.
    """
    total = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            total += float((tensor.grad ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        ratio = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * ratio
    return norm


# ---------------------------------------------------------------------------
# sampling and metrics

def sample_hypotheses(track: GaussianTrack, k: int, seed: int) -> np.ndarray:
    """K draws [K, T_f, N, 2] from the per-step bivariate Gaussians.

    One seeded stream fills draws in K-major order, so the first k' rows
    for any k' < K coincide with a separate k'-sample call.
    """
    if k < 1:
        raise ContractError("sample count must be at least 1")
    sx, sy = track.sigma_x.data, track.sigma_y.data
    rho = track.rho.data
    if np.any(sx <= 0) or np.any(sy <= 0) or np.any(np.abs(rho) >= 1):
        raise ContractError("track violates Gaussian invariants")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((k,) + sx.shape + (2,))
    x = track.mu_x.data + sx * eps[..., 0]
    y = (track.mu_y.data + rho * sy * eps[..., 0]
         + sy * np.sqrt(1.0 - rho * rho) * eps[..., 1])
    return np.stack([x, y], axis=-1)


def _per_agent_errors(samples: np.ndarray, target: np.ndarray):
    if samples.ndim != 4 or samples.shape[0] < 1:
        raise ContractError("need at least one sample hypothesis")
    target = np.asarray(target, dtype=np.float64)
    if samples.shape[1:] != target.shape:
        raise ContractError(
            f"samples {samples.shape[1:]} do not match target {target.shape}")
    step_err = np.linalg.norm(samples - target, axis=3)   # [K, T, N]
    ade = step_err.mean(axis=1).min(axis=0)               # [N]
    fde = step_err[:, -1, :].min(axis=0)                  # [N]
    return ade, fde


def min_ade(samples: np.ndarray, target: np.ndarray) -> float:
    """Best-of-K average displacement error, averaged over agents."""
    ade, _ = _per_agent_errors(samples, target)
    return float(ade.mean())


def min_fde(samples: np.ndarray, target: np.ndarray) -> float:
    """Best-of-K final displacement error, averaged over agents."""
    _, fde = _per_agent_errors(samples, target)
    return float(fde.mean())


@dataclass
class MetricsReport:
    """Best-of-K errors per requested K, agent-pooled across scenes."""

    k_values: list[int]
    ade: dict[int, float]
    fde: dict[int, float]
    per_scene: list[dict[int, tuple[float, float]]] = field(default_factory=list)
    num_scenes: int = 0
    num_agents: int = 0

    def as_dict(self) -> dict:
        return {
            "k_values": self.k_values,
            "min_ade": {str(k): self.ade[k] for k in self.k_values},
            "min_fde": {str(k): self.fde[k] for k in self.k_values},
            "num_scenes": self.num_scenes,
            "num_agents": self.num_agents,
        }


def evaluate(model: Forecaster, scenes, k_values, seed: int = 0) -> MetricsReport:
    """Sampled displacement metrics over a scene collection.

    Samples once at max(K) per scene and slices prefixes, so reported
    errors are non-increasing in K by construction.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values or k_values[0] < 1:
        raise ContractError("k_values must contain positive sample counts")
    if not scenes:
        raise ContractError("evaluation needs at least one scene")
    k_max = k_values[-1]
    pooled_ade = {k: [] for k in k_values}
    pooled_fde = {k: [] for k in k_values}
    per_scene = []
    for idx, scene in enumerate(scenes):
        with T.no_grad():
            out = model.forward(scene.history, scene.image, scene.affine,
                                scene.agent_ids)
        samples = sample_hypotheses(out.track, k_max, seed=seed + idx)
        entry = {}
        for k in k_values:
            ade, fde = _per_agent_errors(samples[:k], scene.future)
            pooled_ade[k].extend(ade.tolist())
            pooled_fde[k].extend(fde.tolist())
            entry[k] = (float(ade.mean()), float(fde.mean()))
        per_scene.append(entry)
    return MetricsReport(
        k_values=k_values,
        ade={k: float(np.mean(pooled_ade[k])) for k in k_values},
        fde={k: float(np.mean(pooled_fde[k])) for k in k_values},
        per_scene=per_scene,
        num_scenes=len(per_scene),
        num_agents=len(pooled_ade[k_values[0]]))


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochRecord:
    epoch: int
    loss_prob: float
    loss_dist: float
    loss_total: float


def _batches(scenes, batch_size: int, rng: np.random.Generator):
    """Scene index batches, grouped by agent count, order shuffled."""
    by_n: dict[int, list[int]] = {}
    for idx, scene in enumerate(scenes):
        by_n.setdefault(scene.history.shape[1], []).append(idx)
    batches = []
    for n in sorted(by_n):
        group = np.array(by_n[n])
        rng.shuffle(group)
        for start in range(0, len(group), batch_size):
            batches.append(group[start:start + batch_size].tolist())
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def fit(model: Forecaster, scenes, cfg: TrainConfig,
        checkpoint_path: str | Path | None = None,
        progress=None) -> list[EpochRecord]:
    """Mini-batch SGD over scenes; returns the per-epoch loss log."""
    cfg.validate()
    if not scenes:
        raise ContractError("training needs at least one scene")
    loss_cfg = LossConfig(lambda_dist=cfg.lambda_dist)
    rng = np.random.default_rng(cfg.seed)
    tensors = model.params.tensors()
    records = []
    # Which parameters actually receive gradients is fixed by the model
    # configuration (blocked env gradients or an ablated branch leave
    # whole groups out of the graph). The first step records that set;
    # afterwards a parameter dropping out of it is a wiring bug.
    trainable: set[str] | None = None
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        count = 0
        for batch_no, batch in enumerate(_batches(scenes, cfg.batch_size, rng)):
            T.zero_grads(tensors)
            scale = 1.0 / len(batch)
            for idx in batch:
                scene = scenes[idx]
                out = model.forward(scene.history, scene.image, scene.affine,
                                    scene.agent_ids)
                prob = loss_prob(out.track, scene.future)
                dist = loss_dist(out.track, scene.future)
                total = T.add(prob, T.mul(dist, loss_cfg.lambda_dist))
                value = float(total.data.reshape(-1)[0])
                if not math.isfinite(value):
                    raise NumericError(
                        f"loss became non-finite at epoch {epoch} batch "
                        f"{batch_no} (scene index {idx})")
                sums += (float(prob.data.reshape(-1)[0]),
                         float(dist.data.reshape(-1)[0]), value)
                count += 1
                T.backward(T.mul(total, scale))
            if trainable is None:
                trainable = {name for name, t in model.params.items()
                             if t.grad is not None}
                if not trainable:
                    raise ContractError("no parameter received a gradient")
            if cfg.max_grad_norm is not None:
                clip_grad_norm(model.params, cfg.max_grad_norm)
            sgd_step(model.params, cfg.lr, trainable)
        means = sums / max(count, 1)
        records.append(EpochRecord(epoch, means[0], means[1], means[2]))
        if progress is not None:
            progress(records[-1])
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.config, model.params)
    return records


def write_loss_log(path: str | Path, records: list[EpochRecord]) -> None:
    """CSV loss log: epoch, L_prob, L_dist, L_total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_prob", "loss_dist", "loss_total"])
        for rec in records:
            writer.writerow([rec.epoch, repr(rec.loss_prob),
                             repr(rec.loss_dist), repr(rec.loss_total)])
