"""Command-line front end.

Six subcommands cover the pipeline: synth makes a scene dataset, train
fits a model on the train split, eval and predict consume a checkpoint
on the test split, gradcheck runs the finite-difference suite, and
ksweep tabulates best-of-K error against K.

Settings resolve as defaults < config file < command-line flags, where
the named flags (--seed, --ablate, ...) win over --set pairs for the
same key. Every artifact-writing command is deterministic: rerunning
with the same seed and config reproduces each output byte for byte.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import tensor as T
from .config import ABLATIONS, RunConfig, load_config
from .errors import ConfigError, DataError, SpectrajError
from .model import Forecaster, init_params, load_checkpoint
from .scene import (ScenarioSpec, generate_dataset, load_dataset,
                    split_dataset, write_dataset)
from .training import evaluate, fit, sample_hypotheses, write_loss_log
from .verify import format_report, run_suite

COMMANDS = ("synth", "train", "eval", "predict", "gradcheck", "ksweep")

# flags that map straight onto RunConfig fields; values stay raw strings
# so the config module's coercion is the single parsing path
_FLAG_FIELDS = {
    "seed": "seed",
    "out": "out",
    "dataset": "dataset",
    "checkpoint": "checkpoint",
    "k_list": "k_list",
    "ablate": "ablate",
    "env_grad": "env_grad",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectraj",
        description="Spectral-temporal graph forecaster for multi-agent "
                    "trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic scene dataset",
        "train": "fit a model on the train split and write a checkpoint",
        "eval": "report best-of-K metrics on the test split",
        "predict": "write sampled hypotheses for the test split",
        "gradcheck": "run the finite-difference verification suite",
        "ksweep": "tabulate minADE/minFDE against sample count K",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH",
                       help="key = value settings file")
        p.add_argument("--seed", metavar="INT")
        p.add_argument("--out", metavar="DIR",
                       help="artifact directory (default 'out')")
        p.add_argument("--dataset", metavar="DIR",
                       help="scene directory (default <out>/dataset)")
        p.add_argument("--checkpoint", metavar="PATH",
                       help="model checkpoint (default <out>/checkpoint.json)")
        p.add_argument("--k-list", dest="k_list", metavar="K1,K2,...")
        p.add_argument("--ablate", choices=ABLATIONS)
        p.add_argument("--env-grad", dest="env_grad",
                       choices=("broadened", "blocked"))
        p.add_argument("--set", dest="assignments", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="override any config field (repeatable)")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    for pair in args.assignments:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        overrides[key.strip()] = value.strip()
    for flag, field in _FLAG_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = str(value)
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_dir(cfg: RunConfig) -> Path:
    return Path(cfg.dataset) if cfg.dataset else Path(cfg.out) / "dataset"


def _checkpoint_path(cfg: RunConfig) -> Path:
    return (Path(cfg.checkpoint) if cfg.checkpoint
            else Path(cfg.out) / "checkpoint.json")


def _splits(cfg: RunConfig, scenes):
    ratios = (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio)
    return split_dataset(scenes, ratios, cfg.split_seed)


def _load_model(cfg: RunConfig) -> Forecaster:
    path = _checkpoint_path(cfg)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    model_cfg, params = load_checkpoint(path)
    return Forecaster(model_cfg, params)


def _test_scenes(cfg: RunConfig):
    scenes = load_dataset(_dataset_dir(cfg))
    _, _, test_idx = _splits(cfg, scenes)
    if not test_idx:
        raise DataError("test split is empty; adjust ratios or dataset size")
    return [scenes[i] for i in test_idx]


def cmd_synth(cfg: RunConfig) -> int:
    spec = ScenarioSpec(
        num_agents=cfg.num_agents, t_h=cfg.t_h, t_f=cfg.t_f, dt=cfg.dt,
        noise=cfg.noise, seed=cfg.seed, extent=cfg.extent,
        with_image=cfg.with_image, image_size=cfg.image_size,
        min_separation=cfg.min_separation)
    scenes = generate_dataset(cfg.num_scenes, spec)
    paths = write_dataset(_dataset_dir(cfg), scenes)
    print(f"wrote {len(paths)} scenes to {_dataset_dir(cfg)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    scenes = load_dataset(_dataset_dir(cfg))
    train_idx, _, _ = _splits(cfg, scenes)
    if not train_idx:
        raise DataError("train split is empty; adjust ratios or dataset size")
    train_scenes = [scenes[i] for i in train_idx]
    model_cfg = cfg.to_model_config()
    model = Forecaster(model_cfg, init_params(model_cfg, cfg.seed))
    out = _out_dir(cfg)
    stride = max(1, cfg.epochs // 10)

    def progress(rec):
        if rec.epoch % stride == 0 or rec.epoch == cfg.epochs - 1:
            print(f"epoch {rec.epoch:4d}  loss {rec.loss_total:.4f}")

    records = fit(model, train_scenes, cfg.to_train_config(),
                  checkpoint_path=_checkpoint_path(cfg), progress=progress)
    write_loss_log(out / "loss_log.csv", records)
    print(f"trained on {len(train_scenes)} scenes; checkpoint at "
          f"{_checkpoint_path(cfg)}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    report = evaluate(model, _test_scenes(cfg), cfg.k_list, seed=cfg.seed)
    payload = {"config": cfg.resolved(), "metrics": report.as_dict()}
    path = _out_dir(cfg) / "metrics.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    for k in report.k_values:
        print(f"K={k:3d}  minADE {report.ade[k]:.4f}  "
              f"minFDE {report.fde[k]:.4f}")
    print(f"metrics written to {path}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    scenes = _test_scenes(cfg)
    k = max(cfg.k_list)
    path = _out_dir(cfg) / "predictions.jsonl"
    with open(path, "w") as fh:
        for idx, scene in enumerate(scenes):
            with T.no_grad():
                out = model.forward(scene.history, scene.image, scene.affine,
                                    scene.agent_ids)
            # seed offset matches evaluate(), so written hypotheses are
            # the ones the metrics were computed from
            samples = sample_hypotheses(out.track, k, seed=cfg.seed + idx)
            fh.write(json.dumps({
                "scene": scene.scene_id,
                "agents": list(scene.agent_ids),
                "samples": samples.tolist(),
            }, sort_keys=True) + "\n")
    print(f"wrote {len(scenes)} scenes x {k} hypotheses to {path}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_suite(cfg.seed)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_ksweep(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    k_max = max(cfg.k_list)
    report = evaluate(model, _test_scenes(cfg), range(1, k_max + 1),
                      seed=cfg.seed)
    path = _out_dir(cfg) / "ksweep.csv"
    lines = ["k,min_ade,min_fde"]
    lines += [f"{k},{report.ade[k]!r},{report.fde[k]!r}"
              for k in report.k_values]
    path.write_text("\n".join(lines) + "\n")
    print(f"K sweep over 1..{k_max} written to {path}")
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "ksweep": cmd_ksweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        return _HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SpectrajError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
