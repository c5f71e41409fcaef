"""
The S1 -> S4 ladder on one seed
===============================

S1 is the plain conditional WGAN, S2 adds the seen/unseen boundary term,
S3 adds the cycle through the decoder and S4 scores with the decoder too.
Single-seed numbers are noisy; the acceptance suite takes medians over five.
"""

import sys

from genzsl.cli import TOY_CONFIG, RunConfig
from genzsl.evaluation import evaluate
from genzsl.model import init_params
from genzsl.training import train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
run = RunConfig.from_dict({**TOY_CONFIG, "seed": seed})
ds = run.load_dataset()
start = init_params(run.model_config(ds))

rows = {}
for mode in ("S1", "S2", "S3"):
    params, _ = train(run.train_config(ds, mode), ds, params=start.copy())
    rows[mode] = evaluate(params, ds, run.eval_config(mode))
    if mode == "S3":
        # same training, fused scores
        rows["S4"] = evaluate(params, ds, run.eval_config("S4"))

print("mode   zsl    u      s      H      fcs")
for mode, r in rows.items():
    print(f"{mode}   {r.zsl_acc:.3f}  {r.gzsl_unseen:.3f}  {r.gzsl_seen:.3f}  {r.gzsl_harmonic:.3f}  {r.fcs:.4f}")
