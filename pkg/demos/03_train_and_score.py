"""
Train one model on the toy and score it
=======================================

Uses the same settings as ``genzsl train --config configs/toy.json``.
Pass a number of epochs as the first argument for a quicker look.
"""

import sys
import time

from genzsl.cli import TOY_CONFIG, RunConfig
from genzsl.evaluation import evaluate
from genzsl.training import train

run = RunConfig.from_dict(TOY_CONFIG)
if len(sys.argv) > 1:
    run.train = {**run.train, "epochs": int(sys.argv[1])}
ds = run.load_dataset()
cfg = run.train_config(ds)
print("mode", cfg.mode, "epochs", cfg.epochs, "lr", cfg.learning_rate, "weights", cfg.loss_weights)

t0 = time.time()
params, log = train(cfg, ds)
print(f"trained in {time.time() - t0:.1f}s")

cycle = log.epoch_means("cycle")
for e in sorted(cycle)[:: max(1, cfg.epochs // 5)]:
    print(f"epoch {e:3d} cycle {cycle[e]:.4f}  critic {log.epoch_means('critic_loss')[e]:8.3f}")

report = evaluate(params, ds, run.eval_config())
print("zsl    ", round(report.zsl_acc, 3))
print("gzsl u ", round(report.gzsl_unseen, 3), " s", round(report.gzsl_seen, 3),
      " H", round(report.gzsl_harmonic, 3))
print("fcs    ", round(report.fcs, 4))
