"""
Checking hand-written gradients
===============================

Every loss comes with an analytic gradient. Here one of them, the critic
objective with its gradient penalty, is compared with central differences
on a tiny network.
"""

import numpy as np

from genzsl import LossWeights, ModelConfig, init_params
from genzsl.losses import (boundary_loss, classification_loss, critic_objective_features,
                           critic_objective_features_grad)
from genzsl.model import generator_forward

# a few values worth knowing by heart
print("boundary(0.5)      ", boundary_loss(np.array([0.5])), np.log(2))
print("CE of zero logits  ", classification_loss(np.zeros((4, 5)), np.arange(4)), np.log(5))

cfg = ModelConfig(d_visual=6, d_semantic=4, n_seen_classes=3, d_noise=3,
                  g_hidden=7, d_hidden=5, dprime_hidden=4, phi_hidden=6, init_seed=0)
p = init_params(cfg).astype(np.float64)
n_params = sum(v.size for v in p.critic.values())
print("critic parameters:", n_params)

rng = np.random.default_rng(0)
x_real = rng.random((8, 6)) + 0.5
labels = rng.integers(0, 3, 8)
a = rng.random((8, 4))
x_fake = generator_forward(p, rng.standard_normal((8, 3)), a)
w = LossWeights()

_, grads = critic_objective_features_grad(p, x_real, labels, x_fake, labels, w, seed=1)

def f(params):
    return critic_objective_features(params, x_real, labels, x_fake, labels, w, seed=1)

h = 1e-3
worst = 0.0
for name, W in p.critic.items():
    num = np.zeros_like(W)
    for i in np.ndindex(W.shape):
        old = W[i]
        W[i] = old + h
        up = f(p)
        W[i] = old - h
        down = f(p)
        W[i] = old
        num[i] = (up - down) / (2 * h)
    # b_real cancels between the real and fake terms, so its gradient is 0
    err = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num), 1e-6)
    worst = max(worst, err)
    print(f"{name:7s} relative error {err:.2e}")
print("worst:", f"{worst:.2e}")
# when a rectifier input sits within h of zero the difference straddles the
# kink and the error here jumps; the test suite redraws such instances

