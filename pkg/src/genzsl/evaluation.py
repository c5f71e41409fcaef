"""Feature synthesis, final classifiers, ZSL/GZSL scoring and confusion metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dataset import PrototypeSet, ZslDataset, compute_prototypes
from .model import ModelParams, decoder_forward, generator_forward


@dataclass(frozen=True)
class SynthesizedSet:
    features: np.ndarray
    labels: np.ndarray
    per_class: int
    seed: int


@dataclass
class EvalReport:
    zsl_acc: float | None = None
    gzsl_unseen: float | None = None
    gzsl_seen: float | None = None
    gzsl_harmonic: float | None = None
    fcs: float | None = None
    per_class_acc: dict = field(default_factory=dict)
    config_digest: str = ""

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["per_class_acc"] = {str(k): v for k, v in self.per_class_acc.items()}
        return d

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d["per_class_acc"] = {k: v for k, v in d.get("per_class_acc", {}).items()}
        return cls(**d)


@dataclass(frozen=True)
class EvalConfig:
    """Settings for the final-classifier protocols.

    ``fuse`` adds ``omega`` times the decoder's semantic scores to the
    classifier probabilities (the S4 ablation setting).
    """

    per_class: int = 300
    omega: float = 0.1
    reg: float = 1e-3
    fcs_cap: int = 1000
    fuse: bool = True
    seed: int = 0

    def digest(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def synthesize(params: ModelParams, class_embeddings, class_ids, per_class: int, seed) -> SynthesizedSet:
    """``per_class`` generator samples for each id in ``class_ids``.

    ``class_embeddings`` is the full embedding matrix indexed by class id.
    """
    emb = np.asarray(class_embeddings, dtype=np.float64)
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= len(emb)):
        raise ValueError(f"unknown class id among {ids.tolist()}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    labels = np.repeat(ids, per_class)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((labels.size, params.config.d_noise))
    feats = generator_forward(params, z, emb[labels])
    return SynthesizedSet(features=feats, labels=labels, per_class=per_class, seed=int(seed))


# -- softmax classifier --------------------------------------------------------

@dataclass(frozen=True)
class SoftmaxClassifier:
    classes: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def logits(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.W + self.b

    def predict_proba(self, x) -> np.ndarray:
        return _softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return self.classes[np.argmax(self.logits(x), axis=1)]


def _softmax(t):
    t = t - t.max(axis=1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=1, keepdims=True)


def softmax_objective(theta, x, y_pos, n_classes, reg):
    """Mean cross-entropy plus ``reg/2 * ||W||^2`` and its gradient.

    ``theta`` packs ``W`` (row-major, d x k) followed by ``b``.
    """
    n, d = x.shape
    W = theta[: d * n_classes].reshape(d, n_classes)
    b = theta[d * n_classes:]
    t = x @ W + b
    t = t - t.max(axis=1, keepdims=True)
    lse = np.log(np.exp(t).sum(axis=1))
    rows = np.arange(n)
    value = np.mean(lse - t[rows, y_pos]) + 0.5 * reg * np.sum(W * W)
    p = np.exp(t - lse[:, None])
    p[rows, y_pos] -= 1.0
    p /= n
    gW = x.T @ p + reg * W
    gb = p.sum(axis=0)
    return value, np.concatenate([gW.ravel(), gb])


def train_softmax(features, labels, reg: float = 1e-3, classes=None, gtol: float = 1e-5,
                  max_iter: int = 5000) -> SoftmaxClassifier:
    """Multinomial logistic regression fitted with L-BFGS from a zero start."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    if len(classes) < 2:
        raise ValueError("train_softmax needs at least two classes")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    pos = np.searchsorted(classes, labels)
    if np.any(pos >= len(classes)) or np.any(classes[np.minimum(pos, len(classes) - 1)] != labels):
        raise ValueError("labels contain classes outside `classes`")
    d, k = x.shape[1], len(classes)
    res = minimize(softmax_objective, np.zeros(d * k + k), args=(x, pos, k, reg),
                   jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "maxiter": max_iter, "maxcor": 20, "ftol": 0.0})
    W = res.x[: d * k].reshape(d, k)
    return SoftmaxClassifier(classes=classes, W=W, b=res.x[d * k:])


# -- metrics -------------------------------------------------------------------

def per_class_top1(predicted, truth, classes=None) -> float:
    """Mean over classes of within-class accuracy."""
    return float(np.mean(list(per_class_accuracies(predicted, truth, classes).values())))


def per_class_accuracies(predicted, truth, classes=None) -> dict[int, float]:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError("predicted and truth must be aligned")
    classes = np.unique(truth) if classes is None else classes
    out = {}
    for c in classes:
        mask = truth == c
        if not mask.any():
            raise ValueError(f"class {int(c)} has no test samples")
        out[int(c)] = float(np.mean(predicted[mask] == c))
    return out


def harmonic_mean(u: float, s: float) -> float:
    if u < 0 or s < 0:
        raise ValueError("accuracies must be nonnegative")
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def semantic_scores(params: ModelParams, x, class_embeddings) -> np.ndarray:
    """Softmax over classes of the negative squared distance between the
    decoded features and each class embedding."""
    emb = np.asarray(class_embeddings, dtype=np.float64)
    s = decoder_forward(params, x)
    if emb.ndim != 2 or emb.shape[1] != s.shape[1]:
        raise ValueError("class embeddings do not match the decoder output width")
    d2 = (s * s).sum(1)[:, None] - 2.0 * s @ emb.T + (emb * emb).sum(1)[None, :]
    return _softmax(-d2)


def fuse_scores(f_v, f_s, omega: float) -> np.ndarray:
    f_v, f_s = np.asarray(f_v, dtype=np.float64), np.asarray(f_s, dtype=np.float64)
    if f_v.shape != f_s.shape:
        raise ValueError(f"score matrices differ in shape: {f_v.shape} vs {f_s.shape}")
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return f_v + omega * f_s


def feature_confusion_score(synth, prototypes: PrototypeSet) -> float:
    """Mean over synthesized rows of ``1 / min_j ||x - c_j||^2``.

    Lower means synthesized features sit farther from the seen prototypes.
    Returns ``inf`` when a synthesized row coincides with a prototype.
    """
    x = synth.features if isinstance(synth, SynthesizedSet) else synth
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(prototypes.prototypes, dtype=np.float64)
    if x.size == 0 or c.size == 0:
        raise ValueError("feature_confusion_score needs nonempty inputs")
    nearest = _nearest_sq_dist(x, c)[0]
    if np.any(nearest == 0):
        return math.inf
    return float(np.mean(1.0 / nearest))


def _nearest_sq_dist(x, c):
    diff = x[:, None, :] - c[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    j = np.argmin(d2, axis=1)
    return d2[np.arange(len(x)), j], j


def fcs_report(params, ds: ZslDataset, cfg: EvalConfig, synth: SynthesizedSet | None = None) -> dict:
    """FCS of synthesized unseen features against real seen training prototypes.

    Uses at most ``cfg.fcs_cap`` synthesized rows (seeded subsample).
    """
    if synth is None:
        synth = synthesize(params, ds.class_embeddings, sorted(ds.unseen_classes),
                           cfg.per_class, cfg.seed)
    x = synth.features
    if len(x) > cfg.fcs_cap:
        pick = np.sort(np.random.default_rng(cfg.seed + 1).choice(len(x), cfg.fcs_cap, replace=False))
        x = x[pick]
    idx = ds.idx_train_seen
    protos = compute_prototypes(ds.features[idx], ds.labels[idx], sorted(ds.seen_classes))
    fcs = feature_confusion_score(x, protos)
    _, j = _nearest_sq_dist(np.asarray(x, float), protos.prototypes)
    hist = {str(int(c)): int(np.sum(j == k)) for k, c in enumerate(protos.class_ids)}
    return {"fcs": fcs, "n_samples": int(len(x)), "nearest_prototype_histogram": hist}


# -- protocols -----------------------------------------------------------------

def _scores(clf, params, x, class_embeddings, cfg):
    f = clf.predict_proba(x)
    if cfg.fuse:
        f = fuse_scores(f, semantic_scores(params, x, class_embeddings[clf.classes]), cfg.omega)
    return f


def evaluate_zsl(params: ModelParams, ds: ZslDataset, cfg: EvalConfig,
                 synth: SynthesizedSet | None = None) -> dict:
    """Classifier on synthesized unseen features, scored on real unseen tests
    within the unseen label space only."""
    unseen = np.asarray(sorted(ds.unseen_classes))
    emb = np.asarray(ds.class_embeddings, dtype=np.float64)
    if synth is None:
        synth = synthesize(params, emb, unseen, cfg.per_class, cfg.seed)
    idx = ds.idx_test_unseen
    x_test, y_test = np.asarray(ds.features[idx], float), np.asarray(ds.labels[idx])
    if len(unseen) == 1:
        pred = np.full(len(y_test), unseen[0])
    else:
        clf = train_softmax(synth.features, synth.labels, cfg.reg, classes=unseen)
        pred = clf.classes[np.argmax(_scores(clf, params, x_test, emb, cfg), axis=1)]
    assert np.isin(pred, unseen).all(), "ZSL predicted a seen class"
    per_class = per_class_accuracies(pred, y_test, unseen)
    return {"zsl_acc": float(np.mean(list(per_class.values()))), "per_class_acc": per_class,
            "predictions": pred}


def evaluate_gzsl(params: ModelParams, ds: ZslDataset, cfg: EvalConfig,
                  synth: SynthesizedSet | None = None) -> dict:
    """Classifier on real seen training features plus synthesized unseen
    features over the joint label space."""
    seen = np.asarray(sorted(ds.seen_classes))
    unseen = np.asarray(sorted(ds.unseen_classes))
    emb = np.asarray(ds.class_embeddings, dtype=np.float64)
    if synth is None:
        synth = synthesize(params, emb, unseen, cfg.per_class, cfg.seed)
    tr = ds.idx_train_seen
    x_train = np.concatenate([np.asarray(ds.features[tr], float), synth.features])
    y_train = np.concatenate([np.asarray(ds.labels[tr]), synth.labels])
    classes = np.union1d(seen, unseen)
    clf = train_softmax(x_train, y_train, cfg.reg, classes=classes)

    out = {}
    per_class = {}
    for name, idx, group in (("gzsl_seen", ds.idx_test_seen, seen),
                             ("gzsl_unseen", ds.idx_test_unseen, unseen)):
        x = np.asarray(ds.features[idx], float)
        y = np.asarray(ds.labels[idx])
        pred = clf.classes[np.argmax(_scores(clf, params, x, emb, cfg), axis=1)]
        acc = per_class_accuracies(pred, y, group)
        per_class.update(acc)
        out[name] = float(np.mean(list(acc.values())))
    out["gzsl_harmonic"] = harmonic_mean(out["gzsl_unseen"], out["gzsl_seen"])
    out["per_class_acc"] = per_class
    return out


def evaluate(params: ModelParams, ds: ZslDataset, cfg: EvalConfig, protocol: str = "both") -> EvalReport:
    """Run the requested protocol(s) plus FCS and collect an EvalReport."""
    if protocol not in ("zsl", "gzsl", "both"):
        raise ValueError(f"unknown protocol {protocol!r}")
    synth = synthesize(params, ds.class_embeddings, sorted(ds.unseen_classes),
                       cfg.per_class, cfg.seed)
    report = EvalReport(config_digest=cfg.digest())
    if protocol in ("zsl", "both"):
        r = evaluate_zsl(params, ds, cfg, synth)
        report.zsl_acc = r["zsl_acc"]
        report.per_class_acc.update({f"zsl:{k}": v for k, v in r["per_class_acc"].items()})
    if protocol in ("gzsl", "both"):
        r = evaluate_gzsl(params, ds, cfg, synth)
        report.gzsl_seen, report.gzsl_unseen = r["gzsl_seen"], r["gzsl_unseen"]
        report.gzsl_harmonic = r["gzsl_harmonic"]
        report.per_class_acc.update({f"gzsl:{k}": v for k, v in r["per_class_acc"].items()})
    report.fcs = fcs_report(params, ds, cfg, synth)["fcs"]
    return report


# -- 2-D projection ------------------------------------------------------------

def project_2d(features) -> np.ndarray:
    """Top-two principal-component coordinates.

    Each component's largest-magnitude loading is made positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("project_2d needs at least three rows")
    xc = x - x.mean(axis=0)
    if np.linalg.matrix_rank(xc) < 2:
        raise ValueError("input has rank < 2 after centering")
    evals, evecs = np.linalg.eigh(xc.T @ xc)
    comps = evecs[:, ::-1][:, :2]
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), [0, 1]])
    return xc @ (comps * flip)


def export_projection_csv(path, ids, labels, coords) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "x", "y"])
        for i, lab, (px, py) in zip(ids, labels, coords):
            w.writerow([i, int(lab), repr(float(px)), repr(float(py))])
