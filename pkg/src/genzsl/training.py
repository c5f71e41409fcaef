"""Alternating optimization of critic, seen/unseen discriminator and generator."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import ZslDataset
from .losses import (
    MODES,
    GeneratorBatch,
    LossWeights,
    critic_objective_grad,
    domain_disc_loss_grad,
    effective_weights,
    generator_total_grad,
)
from .model import (
    ModelConfig,
    ModelParams,
    generator_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "Adam", "OptimState", "TrainConfig", "TrainLog", "TrainingAborted",
    "train", "train_step_critic", "train_step_domain_disc", "train_step_generator",
    "save_checkpoint", "load_checkpoint", "model_config_for",
]


class TrainingAborted(RuntimeError):
    """A loss or gradient became non-finite; ``record`` holds the offending step."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    loss_weights: LossWeights = field(default_factory=LossWeights)
    mode: str = "S4"
    batch_size: int = 64
    epochs: int = 100
    critic_steps_per_gen_step: int = 5
    learning_rate: float = 1e-4
    optimizer_betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.critic_steps_per_gen_step < 1:
            raise ValueError("batch_size, epochs and critic_steps_per_gen_step must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not all(0.0 <= b < 1.0 for b in self.optimizer_betas):
            raise ValueError("optimizer betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer_betas"] = list(self.optimizer_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d["model"])
        d["loss_weights"] = LossWeights(**d.get("loss_weights", {}))
        if "optimizer_betas" in d:
            d["optimizer_betas"] = tuple(d["optimizer_betas"])
        return cls(**d)


def model_config_for(ds: ZslDataset, **widths) -> ModelConfig:
    """A ModelConfig whose data dimensions match ``ds``."""
    return ModelConfig(d_visual=ds.d_visual, d_semantic=ds.d_semantic,
                       n_seen_classes=len(ds.seen_classes), **widths)


class Adam:
    """Adaptive moment estimation over one parameter dict.

    Moments are float64; updated parameters are cast back to their dtype.
    """

    def __init__(self, lr=1e-4, betas=(0.5, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = {}
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            m = self.beta1 * self.m.get(k, 0.0) + (1.0 - self.beta1) * g
            with np.errstate(over="ignore", invalid="ignore"):
                v = self.beta2 * self.v.get(k, 0.0) + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            with np.errstate(over="ignore", invalid="ignore"):
                update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            with np.errstate(over="ignore", invalid="ignore"):
                out[k] = (p.astype(np.float64) - update).astype(p.dtype)
        return out


@dataclass
class OptimState:
    critic: Adam
    domain_disc: Adam
    generator: Adam
    decoder: Adam

    @classmethod
    def create(cls, cfg: TrainConfig) -> "OptimState":
        def make():
            return Adam(cfg.learning_rate, cfg.optimizer_betas)
        return cls(make(), make(), make(), make())


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def epoch_means(self, key: str) -> dict[int, float]:
        sums: dict[int, list] = {}
        for r in self.records:
            sums.setdefault(r["epoch"], []).append(r[key])
        return {e: float(np.mean(v)) for e, v in sums.items()}

    def to_jsonl(self, path, include_time=True) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                if not include_time:
                    r = {k: v for k, v in r.items() if k != "wall_clock"}
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TrainLog":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def _check_finite(value, grads, what):
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite {what} loss: {value}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient for {what}.{k}")


def _checked(new, what):
    for k, v in new.items():
        if not np.all(np.isfinite(v)):
            raise TrainingAborted(f"update made {what}.{k} non-finite")
    return new


def train_step_critic(params, state: OptimState, batch, cfg: TrainConfig):
    """One Adam step on the critic.

    ``batch = (x_real, real_labels, a, fake_labels, z, seed)``.
    """
    x_real, real_labels, a, fake_labels, z, seed = batch
    value, grads = critic_objective_grad(params, x_real, real_labels, a, fake_labels, z,
                                         cfg.loss_weights, seed)
    _check_finite(value, grads, "critic")
    return params.replace(critic=_checked(state.critic.step(params.critic, grads), "critic")), value


def train_step_domain_disc(params, state: OptimState, batch, cfg: TrainConfig):
    """One Adam step on the seen/unseen discriminator.

    ``batch = (x_seen_real, x_unseen_fake)``.
    """
    x_seen, x_fake = batch
    value, grads = domain_disc_loss_grad(params, x_seen, x_fake)
    _check_finite(value, grads, "domain_disc")
    return params.replace(domain_disc=_checked(state.domain_disc.step(params.domain_disc, grads), "domain_disc")), value


def train_step_generator(params, state: OptimState, batch: GeneratorBatch, cfg: TrainConfig):
    """One Adam step on generator and decoder; critic and D' are untouched."""
    value, grads, terms = generator_total_grad(params, batch, cfg.loss_weights, cfg.mode)
    _check_finite(value, grads["generator"], "generator")
    _check_finite(value, grads["decoder"], "decoder")
    new = {"generator": _checked(state.generator.step(params.generator, grads["generator"]), "generator")}
    if effective_weights(cfg.loss_weights, cfg.mode).eta2 > 0:
        new["decoder"] = _checked(state.decoder.step(params.decoder, grads["decoder"]), "decoder")
    return params.replace(**new), value, terms


def _split_seen(ds: ZslDataset):
    idx = np.asarray(ds.idx_train_seen)
    if idx.size == 0:
        raise ValueError("training split is empty")
    # the only read of ds.features during training
    x = np.asarray(ds.features[idx], dtype=np.float64)
    y = np.asarray(ds.labels)[idx]
    seen = np.asarray(sorted(ds.seen_classes))
    position = {int(c): i for i, c in enumerate(seen)}
    pos = np.array([position[int(c)] for c in y], dtype=np.int64)
    return x, y, pos


def _iteration(params, state, cfg, rng, idx, x_train, y_train, pos_train, emb, unseen, use_dprime):
    """One generator iteration: k critic steps, an optional D' step, one G step."""
    d_noise = cfg.model.d_noise
    n = len(x_train)
    xb, yb, pb = x_train[idx], y_train[idx], pos_train[idx]
    ab = emb[yb]
    m = len(idx)

    for _ in range(cfg.critic_steps_per_gen_step):
        a_u = emb[unseen[rng.integers(0, len(unseen), size=m)]]
        a_fake = np.concatenate([ab, a_u])
        fake_pos = np.concatenate([pb, np.full(m, -1)])
        z = rng.standard_normal((2 * m, d_noise))
        gp_seed = int(rng.integers(2**31))
        params, c_loss = train_step_critic(
            params, state, (xb, pb, a_fake, fake_pos, z, gp_seed), cfg)

    d_loss = 0.0
    if use_dprime:
        x_s = x_train[rng.integers(0, n, size=m)]
        a_u = emb[unseen[rng.integers(0, len(unseen), size=m)]]
        x_u = generator_forward(params, rng.standard_normal((m, d_noise)), a_u)
        params, d_loss = train_step_domain_disc(params, state, (x_s, x_u), cfg)

    a_u = emb[unseen[rng.integers(0, len(unseen), size=m)]]
    gbatch = GeneratorBatch(
        z_seen=rng.standard_normal((m, d_noise)), a_seen=ab, labels=pb,
        z_unseen=rng.standard_normal((m, d_noise)), a_unseen=a_u)
    params, g_loss, terms = train_step_generator(params, state, gbatch, cfg)

    return params, dict(critic_loss=c_loss, dprime_loss=d_loss, generator_loss=g_loss,
                        boundary=terms["boundary"], cycle=terms["cycle"])


def train(cfg: TrainConfig, ds: ZslDataset, params: ModelParams | None = None,
          on_epoch_end=None, verbose=False):
    """Run the alternating loop; returns ``(params, TrainLog)``.

    Each generator iteration performs ``critic_steps_per_gen_step`` critic
    updates, one discriminator update (modes S2-S4) and one generator update.
    Only ``idx_train_seen`` rows of ``ds.features`` are read.
    ``on_epoch_end(epoch, params)`` is called after every epoch.
    """
    if params is None:
        params = init_params(cfg.model)
    rng = np.random.default_rng(cfg.seed)
    x_train, y_train, pos_train = _split_seen(ds)
    emb = np.asarray(ds.class_embeddings, dtype=np.float64)
    unseen = np.asarray(sorted(ds.unseen_classes))
    use_dprime = effective_weights(cfg.loss_weights, cfg.mode).eta1 > 0
    state = OptimState.create(cfg)
    log = TrainLog()
    n = len(x_train)
    t0 = time.perf_counter()

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            try:
                params, rec = _iteration(params, state, cfg, rng, perm[start:start + cfg.batch_size],
                                         x_train, y_train, pos_train, emb, unseen, use_dprime)
            except TrainingAborted as exc:
                exc.record = {"epoch": epoch, "step": step, "reason": str(exc)}
                raise
            log.append(epoch=epoch, step=step, **rec, wall_clock=time.perf_counter() - t0)

        if verbose:
            recs = [r for r in log.records if r["epoch"] == epoch]
            print(f"epoch {epoch + 1}/{cfg.epochs} "
                  f"critic {np.mean([r['critic_loss'] for r in recs]):.4f} "
                  f"dprime {np.mean([r['dprime_loss'] for r in recs]):.4f} "
                  f"gen {np.mean([r['generator_loss'] for r in recs]):.4f} "
                  f"boundary {np.mean([r['boundary'] for r in recs]):.4f} "
                  f"cycle {np.mean([r['cycle'] for r in recs]):.4f}", flush=True)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, params)
    return params, log


def with_mode(cfg: TrainConfig, mode: str) -> TrainConfig:
    return replace(cfg, mode=mode)
