"""The four networks: generator, two-headed critic, seen/unseen discriminator
and the visual-to-semantic decoder.

Weights are stored ``(fan_in, fan_out)`` so every layer is ``x @ W + b``.
Forward passes run in float64 whatever the parameter dtype. Each network has
a private ``_*_fwd`` returning a cache and a ``*_backward`` consuming it;
the loss module composes these into parameter gradients.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

NETWORKS = ("generator", "critic", "domain_disc", "decoder")


@dataclass(frozen=True)
class ModelConfig:
    d_visual: int
    d_semantic: int
    n_seen_classes: int
    d_noise: int | None = None
    g_hidden: int = 4096
    d_hidden: int = 4096
    dprime_hidden: int = 1024
    phi_hidden: int = 4096
    leaky_slope: float = 0.2
    init_seed: int = 0

    def __post_init__(self):
        if self.d_noise is None:
            object.__setattr__(self, "d_noise", self.d_semantic)
        dims = (self.d_visual, self.d_semantic, self.n_seen_classes, self.d_noise,
                self.g_hidden, self.d_hidden, self.dprime_hidden, self.phi_hidden)
        if min(dims) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def shapes(self) -> dict[str, dict[str, tuple[int, ...]]]:
        """Expected array shape of every parameter, grouped by network."""
        g_in = self.d_noise + self.d_semantic
        return {
            "generator": {
                "W1": (g_in, self.g_hidden), "b1": (self.g_hidden,),
                "W2": (self.g_hidden, self.d_visual), "b2": (self.d_visual,),
            },
            "critic": {
                "W1": (self.d_visual, self.d_hidden), "b1": (self.d_hidden,),
                "W2": (self.d_hidden, self.d_hidden), "b2": (self.d_hidden,),
                "W_real": (self.d_hidden, 1), "b_real": (1,),
                "W_cls": (self.d_hidden, self.n_seen_classes), "b_cls": (self.n_seen_classes,),
            },
            "domain_disc": {
                "W1": (self.d_visual, self.dprime_hidden), "b1": (self.dprime_hidden,),
                "W2": (self.dprime_hidden, 1), "b2": (1,),
            },
            "decoder": {
                "W1": (self.d_visual, self.phi_hidden), "b1": (self.phi_hidden,),
                "W2": (self.phi_hidden, self.d_semantic), "b2": (self.d_semantic,),
            },
        }


@dataclass
class ModelParams:
    config: ModelConfig
    generator: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)
    domain_disc: dict = field(default_factory=dict)
    decoder: dict = field(default_factory=dict)

    def network(self, name: str) -> dict:
        return getattr(self, name)

    def replace(self, **networks) -> "ModelParams":
        """Shallow copy with some networks swapped out."""
        parts = {name: networks.get(name, self.network(name)) for name in NETWORKS}
        return ModelParams(self.config, **parts)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, **{
            name: {k: v.copy() for k, v in self.network(name).items()} for name in NETWORKS})

    def arrays(self):
        """Yield ``(network, name, array)`` in a fixed order."""
        for net in NETWORKS:
            params = self.network(net)
            for key in sorted(params):
                yield net, key, params[key]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, **{
            name: {k: v.astype(dtype) for k, v in self.network(name).items()} for name in NETWORKS})


def init_params(cfg: ModelConfig) -> ModelParams:
    """Fan-in scaled normal weights (He scaling before rectifiers), zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    linear_out = {("critic", "W_real"), ("critic", "W_cls"), ("domain_disc", "W2"),
                  ("decoder", "W2")}
    nets = {}
    for net, shapes in cfg.shapes().items():
        params = {}
        for key, shape in shapes.items():
            if key.startswith("b"):
                params[key] = np.zeros(shape, dtype=np.float32)
            else:
                gain = 1.0 if (net, key) in linear_out else 2.0
                std = np.sqrt(gain / shape[0])
                params[key] = (rng.standard_normal(shape) * std).astype(np.float32)
        nets[net] = params
    return ModelParams(cfg, **nets)


def sample_noise(n: int, d_noise: int, seed) -> np.ndarray:
    """Standard normal noise; ``seed`` may be an int or a ``numpy`` Generator."""
    if n < 1:
        raise ValueError("need at least one noise row")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, d_noise))


def _as2d(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} must have shape (n, {width}), got {x.shape}")
    return x


def _f64(params: dict) -> dict:
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


# -- generator ---------------------------------------------------------------

def _generator_fwd(p: ModelParams, z, a):
    cfg = p.config
    z = _as2d(z, cfg.d_noise, "noise")
    a = _as2d(a, cfg.d_semantic, "semantic batch")
    if z.shape[0] != a.shape[0]:
        raise ValueError("noise and semantic batches need equal row counts")
    w = _f64(p.generator)
    inp = np.concatenate([z, a], axis=1)
    h = inp @ w["W1"] + w["b1"]
    r = np.maximum(h, 0.0)
    o = r @ w["W2"] + w["b2"]
    return np.maximum(o, 0.0), (w, inp, h, r, o, cfg.d_noise)


def generator_forward(p: ModelParams, z, a) -> np.ndarray:
    """Synthesized features ``relu(relu([z, a] W1 + b1) W2 + b2)``."""
    return _generator_fwd(p, z, a)[0]


def generator_backward(cache, dx):
    """Backprop ``dx``; returns ``(param_grads, d_noise, d_semantic)``."""
    w, inp, h, r, o, d_noise = cache
    do = dx * (o > 0)
    dh = (do @ w["W2"].T) * (h > 0)
    grads = {"W1": inp.T @ dh, "b1": dh.sum(0), "W2": r.T @ do, "b2": do.sum(0)}
    dinp = dh @ w["W1"].T
    return grads, dinp[:, :d_noise], dinp[:, d_noise:]


# -- critic ------------------------------------------------------------------

def _critic_fwd(p: ModelParams, x):
    cfg = p.config
    x = _as2d(x, cfg.d_visual, "features")
    w = _f64(p.critic)
    slope = cfg.leaky_slope
    h1 = x @ w["W1"] + w["b1"]
    a1 = np.where(h1 > 0, h1, slope * h1)
    h2 = a1 @ w["W2"] + w["b2"]
    a2 = np.maximum(h2, 0.0)
    realness = (a2 @ w["W_real"])[:, 0] + w["b_real"][0]
    logits = a2 @ w["W_cls"] + w["b_cls"]
    return realness, logits, (w, x, h1, a1, h2, a2, slope)


def critic_forward(p: ModelParams, x):
    """Shared trunk FC-LeakyReLU-FC-ReLU, then a linear realness head and
    a linear seen-class logit head. Returns ``(realness, class_logits)``."""
    realness, logits, _ = _critic_fwd(p, x)
    return realness, logits


def critic_backward(cache, d_realness=None, d_logits=None):
    """Backprop through both heads; returns ``(param_grads, d_x)``."""
    w, x, h1, a1, h2, a2, slope = cache
    n = x.shape[0]
    da2 = np.zeros_like(a2)
    grads = {"W_real": np.zeros_like(w["W_real"]), "b_real": np.zeros(1),
             "W_cls": np.zeros_like(w["W_cls"]), "b_cls": np.zeros_like(w["b_cls"])}
    if d_realness is not None:
        d_realness = np.asarray(d_realness, dtype=np.float64).reshape(n, 1)
        grads["W_real"] = a2.T @ d_realness
        grads["b_real"] = d_realness.sum(0)
        da2 += d_realness @ w["W_real"].T
    if d_logits is not None:
        grads["W_cls"] = a2.T @ d_logits
        grads["b_cls"] = d_logits.sum(0)
        da2 += d_logits @ w["W_cls"].T
    dh2 = da2 * (h2 > 0)
    grads["W2"] = a1.T @ dh2
    grads["b2"] = dh2.sum(0)
    dh1 = (dh2 @ w["W2"].T) * np.where(h1 > 0, 1.0, slope)
    grads["W1"] = x.T @ dh1
    grads["b1"] = dh1.sum(0)
    return grads, dh1 @ w["W1"].T


def critic_input_grad(p: ModelParams, x):
    """Per-row gradient of the realness head with respect to its input row."""
    return _critic_input_grad(p, x)[0]


def _critic_input_grad(p, x):
    _, _, (w, x, h1, a1, h2, a2, slope) = _critic_fwd(p, x)
    # piecewise-linear trunk: the gradient is W1 diag(m1) W2 diag(m2) w_real
    m1 = np.where(h1 > 0, 1.0, slope)
    m2 = (h2 > 0).astype(np.float64)
    u = m2 * w["W_real"][:, 0]
    v = u @ w["W2"].T
    s = v * m1
    return s @ w["W1"].T, (w, m1, m2, u, s)


# -- seen/unseen discriminator -------------------------------------------------

def _domain_disc_fwd(p: ModelParams, x):
    x = _as2d(x, p.config.d_visual, "features")
    w = _f64(p.domain_disc)
    h = x @ w["W1"] + w["b1"]
    r = np.maximum(h, 0.0)
    logit = (r @ w["W2"])[:, 0] + w["b2"][0]
    return logit, (w, x, h, r)


def domain_disc_logits(p: ModelParams, x) -> np.ndarray:
    return _domain_disc_fwd(p, x)[0]


def domain_disc_forward(p: ModelParams, x) -> np.ndarray:
    """Probability that each row comes from a seen class."""
    return _sigmoid(_domain_disc_fwd(p, x)[0])


def domain_disc_backward(cache, d_logit):
    w, x, h, r = cache
    d_logit = np.asarray(d_logit, dtype=np.float64).reshape(-1, 1)
    dh = (d_logit @ w["W2"].T) * (h > 0)
    grads = {"W1": x.T @ dh, "b1": dh.sum(0), "W2": r.T @ d_logit, "b2": d_logit.sum(0)}
    return grads, dh @ w["W1"].T


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- decoder -----------------------------------------------------------------

def _decoder_fwd(p: ModelParams, x):
    x = _as2d(x, p.config.d_visual, "features")
    w = _f64(p.decoder)
    h = x @ w["W1"] + w["b1"]
    r = np.maximum(h, 0.0)
    return r @ w["W2"] + w["b2"], (w, x, h, r)


def decoder_forward(p: ModelParams, x) -> np.ndarray:
    """Map visual features back into the semantic space."""
    return _decoder_fwd(p, x)[0]


def decoder_backward(cache, dout):
    w, x, h, r = cache
    dh = (dout @ w["W2"].T) * (h > 0)
    grads = {"W1": x.T @ dh, "b1": dh.sum(0), "W2": r.T @ dout, "b2": dout.sum(0)}
    return grads, dh @ w["W1"].T


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``model.json`` plus one little-endian float32 file per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for net, key, arr in params.arrays():
        fname = f"{net}.{key}.bin"
        data = np.ascontiguousarray(arr, dtype="<f4")
        (path / fname).write_bytes(data.tobytes())
        files.append({"network": net, "name": key, "file": fname, "shape": list(data.shape)})
    meta = {"format": "genzsl-checkpoint", "version": 1, "dtype": "<f4",
            "config": params.config.to_dict(), "files": files}
    (path / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def load_checkpoint(path, config: ModelConfig | None = None) -> ModelParams:
    """Read a checkpoint; if ``config`` is given it must match the stored one."""
    path = Path(path)
    meta_path = path / "model.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no model.json in checkpoint {path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    stored = ModelConfig(**meta["config"])
    if config is not None and config != stored:
        raise ValueError(f"checkpoint config {stored} does not match expected {config}")
    expected = stored.shapes()
    nets = {name: {} for name in NETWORKS}
    for entry in meta["files"]:
        net, key = entry["network"], entry["name"]
        shape = tuple(entry["shape"])
        if expected.get(net, {}).get(key) != shape:
            raise ValueError(f"checkpoint array {net}.{key} has shape {shape}, "
                             f"config implies {expected.get(net, {}).get(key)}")
        raw = np.fromfile(path / entry["file"], dtype="<f4")
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"checkpoint file {entry['file']} is truncated")
        nets[net][key] = raw.reshape(shape).astype(np.float32)
    for net, shapes in expected.items():
        absent = set(shapes) - set(nets[net])
        if absent:
            raise ValueError(f"checkpoint lacks {net} arrays {sorted(absent)}")
    return ModelParams(stored, **nets)
