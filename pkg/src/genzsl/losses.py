"""Objectives for the critic, the seen/unseen discriminator and the generator.

Scalar functions (``classification_loss``, ``boundary_loss``, ...) evaluate a
single term. The ``*_grad`` variants also return analytic gradients for the
network that the objective trains, as dicts keyed like the parameters.

Class labels passed here are *positions* among the seen classes
(``0 .. n_seen-1``), not dataset class ids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    ModelParams,
    _critic_fwd,
    _critic_input_grad,
    _decoder_fwd,
    _domain_disc_fwd,
    _generator_fwd,
    _sigmoid,
    critic_backward,
    decoder_backward,
    domain_disc_backward,
    generator_backward,
)

PROB_EPS = 1e-12
MODES = ("S1", "S2", "S3", "S4")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 0.01
    beta_gp: float = 10.0
    eta1: float = 0.5
    eta2: float = 0.5

    def __post_init__(self):
        if min(self.lambda_cls, self.beta_gp, self.eta1, self.eta2) < 0:
            raise ValueError("loss weights must be nonnegative")


def effective_weights(w: LossWeights, mode: str) -> LossWeights:
    """Zero the weights an ablation mode switches off.

    S1 trains the plain discriminative WGAN, S2 adds the boundary term,
    S3 and S4 add the cycle term (S4 differs only at evaluation time).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "S1":
        return LossWeights(w.lambda_cls, w.beta_gp, 0.0, 0.0)
    if mode == "S2":
        return LossWeights(w.lambda_cls, w.beta_gp, w.eta1, 0.0)
    return w


def _add(acc: dict, grads: dict, scale: float = 1.0) -> dict:
    for k, v in grads.items():
        acc[k] = acc[k] + scale * v if k in acc else scale * v
    return acc


# -- classification ------------------------------------------------------------

def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _classification_grad(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per logit row required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must index the {k} logit columns")
    logp = _log_softmax(logits)
    rows = np.arange(n)
    value = -logp[rows, labels].mean()
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return float(value), dlogits / n


def classification_loss(class_logits, labels) -> float:
    """Mean negative log-softmax likelihood of the true class."""
    return _classification_grad(class_logits, labels)[0]


# -- gradient penalty ----------------------------------------------------------

def interpolate(x_real, x_fake, seed):
    """Random points on the segments between paired real and fake rows."""
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError("real and fake batches must have identical shapes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mu = rng.uniform(0.0, 1.0, size=(x_real.shape[0], 1))
    return mu * x_real + (1.0 - mu) * x_fake


def gradient_penalty(realness_grad, x_real, x_fake, seed) -> float:
    """Mean of ``(||grad_x D(x_hat)|| - 1)^2`` over interpolates.

    ``realness_grad`` maps a batch of points to the per-row input gradient of
    the critic's realness output, e.g. ``partial(critic_input_grad, params)``.
    """
    x_hat = interpolate(x_real, x_fake, seed)
    g = np.asarray(realness_grad(x_hat), dtype=np.float64)
    norms = np.linalg.norm(g, axis=1)
    return float(np.mean((norms - 1.0) ** 2))


def _critic_gp_grad(params: ModelParams, x_hat):
    """Penalty value at ``x_hat`` and its gradient w.r.t. the critic weights.

    The trunk is piecewise linear, so the input gradient depends on the
    weights only through products of matrices with fixed activation masks.
    """
    g, (w, m1, m2, u, s) = _critic_input_grad(params, x_hat)
    n = g.shape[0]
    norms = np.linalg.norm(g, axis=1)
    value = float(np.mean((norms - 1.0) ** 2))
    safe = np.where(norms > 0, norms, 1.0)
    q = (2.0 / n) * ((norms - 1.0) / safe)[:, None] * g
    q[norms == 0] = 0.0
    dW1 = q.T @ s
    dv = (q @ w["W1"]) * m1
    dW2 = dv.T @ u
    du = dv @ w["W2"]
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    grads["W1"] = dW1
    grads["W2"] = dW2
    grads["W_real"] = (du * m2).sum(axis=0)[:, None]
    return value, grads


# -- critic --------------------------------------------------------------------

def _masked_cls(logits, labels):
    """Classification loss over rows with ``label >= 0``; other rows get no
    gradient. Unseen-conditioned fakes carry label ``-1``."""
    labels = np.asarray(labels)
    keep = labels >= 0
    dlogits = np.zeros_like(logits)
    if not keep.any():
        return 0.0, dlogits
    value, d = _classification_grad(logits[keep], labels[keep])
    dlogits[keep] = d
    return value, dlogits


def critic_objective_features_grad(params, x_real, real_labels, x_fake, fake_labels,
                                   w: LossWeights, seed):
    """Critic loss for explicit real and fake batches, plus critic gradients.

    ``-E[D(x)] + E[D(x_fake)] + lambda*(cls(x) + cls(x_fake)) + beta*GP``.
    Fake rows labelled ``-1`` (unseen-conditioned) enter the realness and
    penalty terms but not the classification term. Fake row ``i`` is
    interpolated with real row ``i mod n_real``.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.ndim != 2 or x_fake.ndim != 2 or x_real.shape[1] != x_fake.shape[1]:
        raise ValueError("real and fake batches must be matrices of equal width")
    n, m = len(x_real), len(x_fake)
    r_real, l_real, c_real = _critic_fwd(params, x_real)
    r_fake, l_fake, c_fake = _critic_fwd(params, x_fake)
    value = r_fake.mean() - r_real.mean()
    dl_real = dl_fake = None
    if w.lambda_cls > 0:
        cls_r, dl_real = _masked_cls(l_real, real_labels)
        cls_f, dl_fake = _masked_cls(l_fake, fake_labels)
        value += w.lambda_cls * (cls_r + cls_f)
        dl_real, dl_fake = w.lambda_cls * dl_real, w.lambda_cls * dl_fake
    grads = critic_backward(c_real, np.full(n, -1.0 / n), dl_real)[0]
    _add(grads, critic_backward(c_fake, np.full(m, 1.0 / m), dl_fake)[0])
    if w.beta_gp > 0:
        paired = x_real[np.arange(m) % n]
        gp, g_gp = _critic_gp_grad(params, interpolate(paired, x_fake, seed))
        value += w.beta_gp * gp
        _add(grads, g_gp, w.beta_gp)
    return float(value), grads


def critic_objective_features(params, x_real, real_labels, x_fake, fake_labels, w, seed) -> float:
    return critic_objective_features_grad(params, x_real, real_labels, x_fake, fake_labels, w, seed)[0]


def critic_objective_grad(params, x_real, real_labels, a, fake_labels, z, w: LossWeights, seed):
    """Critic loss with fakes ``G(z, a)``; ``fake_labels`` are the seen
    positions of the rows of ``a`` (``-1`` for unseen embeddings)."""
    x_fake = _generator_fwd(params, z, a)[0]
    return critic_objective_features_grad(params, x_real, real_labels, x_fake, fake_labels, w, seed)


def critic_objective(params, x_real, real_labels, a, fake_labels, z, w: LossWeights, seed) -> float:
    """Scalar the critic minimizes (the WGAN objective negated, plus penalty)."""
    return critic_objective_grad(params, x_real, real_labels, a, fake_labels, z, w, seed)[0]


# -- generator, adversarial part -----------------------------------------------

def _generator_wgan_terms(params, x, labels, w):
    """Value and d/dx of ``-E[D(x)] + lambda*cls(x)`` for synthesized ``x``."""
    n = x.shape[0]
    r, logits, cache = _critic_fwd(params, x)
    value = -r.mean()
    dl = None
    if w.lambda_cls > 0:
        cls, dl = _masked_cls(logits, labels)
        value += w.lambda_cls * cls
        dl = w.lambda_cls * dl
    dx = critic_backward(cache, np.full(n, -1.0 / n), dl)[1]
    return float(value), dx


def generator_wgan_grad(params, a, z, labels, w: LossWeights):
    x, g_cache = _generator_fwd(params, z, a)
    value, dx = _generator_wgan_terms(params, x, labels, w)
    return value, generator_backward(g_cache, dx)[0]


def generator_wgan_loss(params, a, z, labels, w: LossWeights) -> float:
    """``-E[D(G(z, a))] + lambda * cls(G(z, a))``; rows labelled ``-1``
    count only towards the realness term."""
    return generator_wgan_grad(params, a, z, labels, w)[0]


# -- seen/unseen discriminator ------------------------------------------------

def _log_clipped(p):
    return np.log(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def domain_disc_loss_grad(params, x_seen_real, x_unseen_fake):
    x_seen_real = np.asarray(x_seen_real, dtype=np.float64)
    x_unseen_fake = np.asarray(x_unseen_fake, dtype=np.float64)
    if len(x_seen_real) == 0 or len(x_unseen_fake) == 0:
        raise ValueError("both discriminator batches must be nonempty")
    t_s, c_s = _domain_disc_fwd(params, x_seen_real)
    t_u, c_u = _domain_disc_fwd(params, x_unseen_fake)
    p_s, p_u = _sigmoid(t_s), _sigmoid(t_u)
    value = -_log_clipped(p_s).mean() - _log_clipped(1.0 - p_u).mean()
    live_s = (p_s > PROB_EPS) & (p_s < 1 - PROB_EPS)
    live_u = (p_u > PROB_EPS) & (p_u < 1 - PROB_EPS)
    d_s = np.where(live_s, -(1.0 - p_s), 0.0) / len(p_s)
    d_u = np.where(live_u, p_u, 0.0) / len(p_u)
    grads = domain_disc_backward(c_s, d_s)[0]
    _add(grads, domain_disc_backward(c_u, d_u)[0])
    return float(value), grads


def domain_disc_loss(params, x_seen_real, x_unseen_fake) -> float:
    """Binary cross-entropy with real seen rows as 'seen' and synthesized
    unseen rows as 'unseen'; minimized by the discriminator."""
    return domain_disc_loss_grad(params, x_seen_real, x_unseen_fake)[0]


# -- boundary ------------------------------------------------------------------

def boundary_loss(p_seen) -> float:
    """Cross-entropy between ``[p, 1-p]`` and ``[0.5, 0.5]``, batch mean.

    Smallest (``ln 2``) at ``p = 0.5``; the generator maximizes it.
    """
    p = np.asarray(p_seen, dtype=np.float64)
    if p.size == 0:
        raise ValueError("boundary_loss needs at least one probability")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean(-0.5 * (_log_clipped(p) + _log_clipped(1.0 - p))))


def _boundary_grad_logit(logit):
    p = _sigmoid(logit)
    value = boundary_loss(p)
    live = (p > PROB_EPS) & (p < 1 - PROB_EPS)
    return value, np.where(live, p - 0.5, 0.0) / len(p)


# -- cycle ---------------------------------------------------------------------

def cycle_loss_grad(params, x_hat, a):
    """Value plus ``(decoder_grads, d_x_hat)``."""
    a = np.asarray(a, dtype=np.float64)
    out, cache = _decoder_fwd(params, x_hat)
    if out.shape != a.shape:
        raise ValueError(f"semantic batch shape {a.shape} does not match decoder output {out.shape}")
    diff = out - a
    value = float(np.mean(np.sum(diff**2, axis=1)))
    grads, dx = decoder_backward(cache, 2.0 * diff / len(a))
    return value, grads, dx


def cycle_loss(params, x_hat, a) -> float:
    """Mean squared distance between ``a`` and the decoded ``x_hat``."""
    return cycle_loss_grad(params, x_hat, a)[0]


# -- full generator objective --------------------------------------------------

@dataclass(frozen=True)
class GeneratorBatch:
    """Conditioning for one generator step.

    ``labels`` are seen positions of the rows of ``a_seen``; ``a_unseen``
    rows are embeddings of unseen classes.
    """

    z_seen: np.ndarray
    a_seen: np.ndarray
    labels: np.ndarray
    z_unseen: np.ndarray
    a_unseen: np.ndarray


def generator_total_grad(params, batch: GeneratorBatch, w: LossWeights, mode: str):
    """Returns ``(value, {"generator": ..., "decoder": ...}, terms)``.

    ``value = wgan - eta1 * boundary + eta2 * cycle``. The adversarial term
    covers seen- and unseen-conditioned fakes (classification on seen ones
    only), the boundary term uses the unseen fakes and the cycle term both.
    ``terms`` holds the unweighted parts (0 when a mode disables them).
    """
    w = effective_weights(w, mode)
    x_s, cache_s = _generator_fwd(params, batch.z_seen, batch.a_seen)
    x_u, cache_u = _generator_fwd(params, batch.z_unseen, batch.a_unseen)
    n_s = len(x_s)
    x_all = np.concatenate([x_s, x_u])
    labels = np.concatenate([np.asarray(batch.labels), np.full(len(x_u), -1)])
    wgan, dx_all = _generator_wgan_terms(params, x_all, labels, w)
    value = wgan
    terms = {"wgan": wgan, "boundary": 0.0, "cycle": 0.0}
    dec_grads = {k: np.zeros(v.shape) for k, v in params.decoder.items()}
    if w.eta1 > 0:
        logit, c_d = _domain_disc_fwd(params, x_u)
        b, dlogit = _boundary_grad_logit(logit)
        terms["boundary"] = b
        value -= w.eta1 * b
        dx_all[n_s:] += domain_disc_backward(c_d, -w.eta1 * dlogit)[1]
    if w.eta2 > 0:
        a_all = np.concatenate([np.asarray(batch.a_seen, float), np.asarray(batch.a_unseen, float)])
        c, g_dec, dx_c = cycle_loss_grad(params, x_all, a_all)
        terms["cycle"] = c
        value += w.eta2 * c
        _add(dec_grads, g_dec, w.eta2)
        dx_all += w.eta2 * dx_c
    gen_grads = generator_backward(cache_s, dx_all[:n_s])[0]
    _add(gen_grads, generator_backward(cache_u, dx_all[n_s:])[0])
    return float(value), {"generator": gen_grads, "decoder": dec_grads}, terms


def generator_total_objective(params, batch: GeneratorBatch, w: LossWeights, mode: str) -> float:
    """Scalar the generator (and decoder) minimize under ablation ``mode``."""
    return generator_total_grad(params, batch, w, mode)[0]
