"""Command-line entry point: prepare, train, eval, ablate, fcs.

Every command reads one JSON run config (``--config``); flags override it.
All randomness derives from the top-level ``seed``:

    dataset = seed + 0, init = seed + 1, train = seed + 2, eval = seed + 3

Exit codes: 0 success, 1 usage or config error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import BundleError, SyntheticSpec, ZslDataset, generate_synthetic, load_bundle, write_bundle
from .evaluation import (
    EvalConfig,
    evaluate,
    export_projection_csv,
    fcs_report,
    project_2d,
    synthesize,
)
from .losses import MODES, LossWeights
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingAborted, train

SEED_OFFSETS = {"dataset": 0, "init": 1, "train": 2, "eval": 3}
PROTOCOLS = ("zsl", "gzsl", "both")

# Widths and weights sized for the 32-d synthetic toy; the library defaults
# (4096-wide layers, lambda 0.01, lr 1e-4) target real CNN features.
TOY_CONFIG = {
    "seed": 0,
    "mode": "S4",
    "protocol": "both",
    "synthetic": {"n_seen_classes": 6, "n_unseen_classes": 3, "d_visual": 32, "d_semantic": 8,
                  "samples_per_class": 100, "cluster_spread": 0.15},
    "model": {"g_hidden": 128, "d_hidden": 128, "dprime_hidden": 64, "phi_hidden": 128},
    "train": {"epochs": 100, "batch_size": 64, "learning_rate": 1e-3,
              "loss_weights": {"lambda_cls": 1.0, "eta1": 0.05, "eta2": 0.5}},
    "eval": {"per_class": 300, "omega": 1.0},
}

_TOP_KEYS = {"seed", "mode", "protocol", "out", "dataset", "synthetic", "model", "train", "eval"}
_MODEL_WIDTHS = {"d_noise", "g_hidden", "d_hidden", "dprime_hidden", "phi_hidden", "leaky_slope"}
_TRAIN_KEYS = {"batch_size", "epochs", "critic_steps_per_gen_step", "learning_rate",
               "optimizer_betas", "checkpoint_every", "loss_weights"}
_EVAL_KEYS = {"per_class", "omega", "reg", "fcs_cap"}


class ConfigError(ValueError):
    """Unreadable or inconsistent run configuration."""


@dataclass
class RunConfig:
    """One resolved run: data source, training, evaluation and output settings.

    Exactly one of ``dataset`` (bundle path) and ``synthetic`` is set.
    """

    seed: int = 0
    mode: str = "S4"
    protocol: str = "both"
    out: str = "run"
    dataset: str | None = None
    synthetic: dict | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    def validate(self) -> None:
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("config needs exactly one of 'dataset' and 'synthetic'")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        for name, allowed in (("model", _MODEL_WIDTHS), ("train", _TRAIN_KEYS), ("eval", _EVAL_KEYS)):
            extra = set(getattr(self, name)) - allowed
            if extra:
                raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")
        if self.synthetic is not None:
            extra = set(self.synthetic) - {f.name for f in fields(SyntheticSpec)}
            if extra:
                raise ConfigError(f"unknown keys in 'synthetic': {sorted(extra)}")

    def seed_for(self, component: str) -> int:
        return int(self.seed) + SEED_OFFSETS[component]

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**{**self.synthetic, "seed": self.seed_for("dataset")})

    def load_dataset(self) -> ZslDataset:
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic_spec())
        path = Path(self.dataset)
        if not (path / "manifest.json").is_file():
            raise FileNotFoundError(f"dataset bundle not found: {path}")
        return load_bundle(path)

    def model_config(self, ds: ZslDataset) -> ModelConfig:
        return ModelConfig(d_visual=ds.d_visual, d_semantic=ds.d_semantic,
                           n_seen_classes=len(ds.seen_classes),
                           init_seed=self.seed_for("init"), **self.model)

    def train_config(self, ds: ZslDataset, mode: str | None = None) -> TrainConfig:
        t = dict(self.train)
        lw = LossWeights(**t.pop("loss_weights", {}))
        if "optimizer_betas" in t:
            t["optimizer_betas"] = tuple(t["optimizer_betas"])
        return TrainConfig(model=self.model_config(ds), loss_weights=lw, mode=mode or self.mode,
                           seed=self.seed_for("train"), **t)

    def eval_config(self, mode: str | None = None) -> EvalConfig:
        return EvalConfig(fuse=(mode or self.mode) == "S4", seed=self.seed_for("eval"), **self.eval)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = {k: v for k, v in d.items() if k != "resolved"}
        extra = set(d) - _TOP_KEYS
        if extra:
            raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(d)


def resolved_config(run: RunConfig, ds: ZslDataset) -> dict:
    """Everything needed to repeat the run, with derived seeds spelled out.

    Loadable again with ``--config``; the ``resolved`` block is informational.
    """
    tc = run.train_config(ds)
    return {
        **run.to_dict(),
        "resolved": {
            "seeds": {k: run.seed_for(k) for k in SEED_OFFSETS},
            "train_config": tc.to_dict(),
            "eval_config": asdict(run.eval_config()),
        },
    }


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- argument handling ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(p):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    p.add_argument("--mode", choices=MODES, help="ablation mode (overrides config)")
    p.add_argument("--protocol", choices=PROTOCOLS, help="evaluation protocol (overrides config)")
    p.add_argument("--dataset", help="bundle directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genzsl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("prepare", help="write a dataset bundle")
    _global_flags(p)
    p.add_argument("--synthetic", action="store_true", help="generate the seeded synthetic toy")
    p.add_argument("--seen", type=int, help="seen class count")
    p.add_argument("--unseen", type=int, help="unseen class count")
    p.add_argument("--d-visual", type=int)
    p.add_argument("--d-semantic", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--mat-features", help="res101.mat style feature file")
    p.add_argument("--mat-splits", help="att_splits.mat style split file")

    p = sub.add_parser("train", help="train one model")
    _global_flags(p)
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")

    for name, what in (("eval", "score a checkpoint"), ("fcs", "feature confusion score")):
        p = sub.add_parser(name, help=what)
        _global_flags(p)
        p.add_argument("--checkpoint", help="checkpoint directory (default OUT/checkpoint)")
        if name == "eval":
            p.add_argument("--export-projection", action="store_true",
                           help="write projection.csv of synthesized and real test features")
        else:
            p.add_argument("--cap", type=int, help="maximum synthesized samples")

    p = sub.add_parser("ablate", help="train and score modes S1-S4 from one initialization")
    _global_flags(p)
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--quiet", action="store_true")
    return parser


def _run_config(args) -> RunConfig:
    if args.config:
        run = load_run_config(args.config)
    elif getattr(args, "dataset", None):
        run = RunConfig(dataset=args.dataset)
    else:
        raise ConfigError("--config (or --dataset) is required")
    if args.out is not None:
        run.out = args.out
    if args.seed is not None:
        run.seed = args.seed
    if args.mode is not None:
        run.mode = args.mode
    if args.protocol is not None:
        run.protocol = args.protocol
    if args.dataset is not None:
        run.dataset, run.synthetic = args.dataset, None
    if getattr(args, "epochs", None) is not None:
        run.train = {**run.train, "epochs": args.epochs}
    run.validate()
    return run


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------

def cmd_prepare(args) -> int:
    out = Path(args.out or "bundle")
    if args.mat_features or args.mat_splits:
        if not (args.mat_features and args.mat_splits):
            raise ConfigError("--mat-features and --mat-splits go together")
        from .convert import bundle_from_mat
        ds = bundle_from_mat(args.mat_features, args.mat_splits)
    elif args.synthetic or args.config:
        spec = {}
        if args.config:
            run = load_run_config(args.config)
            if run.synthetic is None:
                raise ConfigError("config has no 'synthetic' section to prepare from")
            spec = dict(run.synthetic)
            spec["seed"] = run.seed_for("dataset") if args.seed is None else args.seed
        for key, val in (("n_seen_classes", args.seen), ("n_unseen_classes", args.unseen),
                         ("d_visual", args.d_visual), ("d_semantic", args.d_semantic),
                         ("samples_per_class", args.samples_per_class),
                         ("cluster_spread", args.spread), ("seed", args.seed)):
            if val is not None:
                spec[key] = val
        ds = generate_synthetic(SyntheticSpec(**spec))
    else:
        raise ConfigError("prepare needs --synthetic, --config with a synthetic section, "
                          "or --mat-features/--mat-splits")
    write_bundle(ds, out)
    print(f"wrote bundle {out}: {ds.n_samples} samples, {ds.class_count} classes "
          f"({len(ds.seen_classes)} seen / {len(ds.unseen_classes)} unseen)")
    return 0


def _periodic_checkpoints(every, out):
    if not every:
        return None

    def hook(epoch, params):
        if epoch % every == 0:
            save_checkpoint(params, out / "checkpoints" / f"epoch_{epoch:04d}")
    return hook


def _train_and_save(run, ds, out, mode, quiet, params=None):
    tc = run.train_config(ds, mode)
    params, log = train(tc, ds, params=params, verbose=not quiet,
                        on_epoch_end=_periodic_checkpoints(tc.checkpoint_every, out))
    save_checkpoint(params, out / "checkpoint")
    log.to_jsonl(out / "train_log.jsonl")
    return params, log


def cmd_train(args) -> int:
    run = _run_config(args)
    ds = run.load_dataset()
    out = _out_dir(run)
    _write_json(out / "config.json", resolved_config(run, ds))
    _train_and_save(run, ds, out, run.mode, args.quiet)
    print(f"wrote {out / 'checkpoint'} and {out / 'train_log.jsonl'}")
    return 0


def _load_model(run, ds, checkpoint):
    path = Path(checkpoint) if checkpoint else Path(run.out) / "checkpoint"
    if not (path / "model.json").is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params = load_checkpoint(path)
    c = params.config
    if (c.d_visual, c.d_semantic, c.n_seen_classes) != (ds.d_visual, ds.d_semantic, len(ds.seen_classes)):
        raise ConfigError(
            f"checkpoint dims (d_visual={c.d_visual}, d_semantic={c.d_semantic}, "
            f"seen={c.n_seen_classes}) do not match the dataset (d_visual={ds.d_visual}, "
            f"d_semantic={ds.d_semantic}, seen={len(ds.seen_classes)})")
    return params


def _export_projection(path, params, ds, ecfg):
    synth = synthesize(params, ds.class_embeddings, sorted(ds.unseen_classes), ecfg.per_class, ecfg.seed)
    idx = np.concatenate([ds.idx_test_seen, ds.idx_test_unseen])
    feats = np.concatenate([synth.features, np.asarray(ds.features[idx], dtype=np.float64)])
    ids = [f"synth-{i}" for i in range(len(synth.features))] + [f"test-{int(i)}" for i in idx]
    labels = np.concatenate([synth.labels, ds.labels[idx]])
    export_projection_csv(path, ids, labels, project_2d(feats))


def cmd_eval(args) -> int:
    run = _run_config(args)
    ds = run.load_dataset()
    params = _load_model(run, ds, args.checkpoint)
    out = _out_dir(run)
    ecfg = run.eval_config()
    report = evaluate(params, ds, ecfg, run.protocol)
    report.to_json(out / "report.json")
    if args.export_projection:
        _export_projection(out / "projection.csv", params, ds, ecfg)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "per_class_acc"}, sort_keys=True))
    return 0


def cmd_fcs(args) -> int:
    run = _run_config(args)
    ds = run.load_dataset()
    params = _load_model(run, ds, args.checkpoint)
    out = _out_dir(run)
    ecfg = run.eval_config()
    if args.cap is not None:
        ecfg = replace(ecfg, fcs_cap=args.cap)
    result = fcs_report(params, ds, ecfg)
    _write_json(out / "fcs.json", result)
    print(json.dumps(result, sort_keys=True))
    return 0


SUMMARY_FIELDS = ("mode", "zsl_acc", "gzsl_unseen", "gzsl_seen", "gzsl_harmonic", "fcs")


def cmd_ablate(args) -> int:
    """Runs S1-S4 from one initialization.

    S3 and S4 share every training loss, so S4 reuses the S3 model and
    differs only in fused scoring at evaluation.
    """
    run = _run_config(args)
    ds = run.load_dataset()
    out = _out_dir(run)
    _write_json(out / "config.json", resolved_config(run, ds))
    start = init_params(run.model_config(ds))
    rows = []
    for mode in MODES:
        mdir = out / mode
        mdir.mkdir(exist_ok=True)
        save_checkpoint(start, mdir / "checkpoint_epoch0")
        if mode == "S4":
            for item in ("checkpoint", "train_log.jsonl"):
                src, dst = out / "S3" / item, mdir / item
                if dst.exists():
                    shutil.rmtree(dst) if dst.is_dir() else dst.unlink()
                (shutil.copytree if src.is_dir() else shutil.copyfile)(src, dst)
            params = load_checkpoint(mdir / "checkpoint")
        else:
            if not args.quiet:
                print(f"== {mode}", flush=True)
            params, _ = _train_and_save(run, ds, mdir, mode, args.quiet, params=start.copy())
        report = evaluate(params, ds, run.eval_config(mode), run.protocol)
        report.to_json(mdir / "report.json")
        rows.append({"mode": mode, **{k: getattr(report, k) for k in SUMMARY_FIELDS[1:]}})

    with open(out / "ablation_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else r[k] for k in SUMMARY_FIELDS})
    for r in rows:
        print("  ".join(f"{k}={r[k]:.4f}" if isinstance(r[k], float) else f"{k}={r[k]}"
                        for k in SUMMARY_FIELDS))
    return 0


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "fcs": cmd_fcs}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TrainingAborted as exc:
        where = f" at {exc.record}" if exc.record else ""
        print(f"genzsl: training aborted{where}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, BundleError, FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"genzsl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
