"""Zero-shot datasets: bundle I/O, validation, prototypes and toy data.

A bundle is a directory holding ``manifest.json`` plus raw little-endian
binaries (float32 for matrices, int32 for labels and index vectors).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

_MATRIX_FILES = {
    "features": "<f4",
    "class_embeddings": "<f4",
    "labels": "<i4",
    "idx_train_seen": "<i4",
    "idx_test_seen": "<i4",
    "idx_test_unseen": "<i4",
}


class BundleError(ValueError):
    """Raised when a bundle on disk is malformed or inconsistent."""


@dataclass(frozen=True)
class ZslDataset:
    """Precomputed visual features with their zero-shot split.

    Row ``k`` of ``class_embeddings`` is the semantic vector of class id ``k``.
    """

    features: np.ndarray
    labels: np.ndarray
    class_embeddings: np.ndarray
    seen_classes: tuple[int, ...]
    unseen_classes: tuple[int, ...]
    idx_train_seen: np.ndarray
    idx_test_seen: np.ndarray
    idx_test_unseen: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def d_visual(self) -> int:
        return int(self.features.shape[1])

    @property
    def d_semantic(self) -> int:
        return int(self.class_embeddings.shape[1])

    @property
    def class_count(self) -> int:
        return int(self.class_embeddings.shape[0])


@dataclass(frozen=True)
class PrototypeSet:
    class_ids: np.ndarray
    prototypes: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.class_ids)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a Gaussian-cluster toy dataset.

    ``seen_test_fraction`` of every seen class is held out for the GZSL
    seen test split; unseen samples all go to the unseen test split.
    """

    n_seen_classes: int = 4
    n_unseen_classes: int = 2
    d_visual: int = 32
    d_semantic: int = 8
    samples_per_class: int = 100
    cluster_spread: float = 0.1
    seed: int = 0
    seen_test_fraction: float = 0.2
    semantic_rank: int | None = None
    min_center_distance: float = 1.5

    def rank(self) -> int:
        """Intrinsic dimension of the embeddings (default ``n_seen - 1``)."""
        if self.semantic_rank is not None:
            return self.semantic_rank
        return max(1, min(self.d_semantic, self.n_seen_classes - 1))

    def __post_init__(self):
        if min(self.n_seen_classes, self.n_unseen_classes, self.samples_per_class) < 1:
            raise ValueError("class and sample counts must be >= 1")
        if min(self.d_visual, self.d_semantic) < 2:
            raise ValueError("dimensions must be >= 2")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be nonnegative")
        if not 0.0 < self.seen_test_fraction < 1.0:
            raise ValueError("seen_test_fraction must lie in (0, 1)")
        if self.semantic_rank is not None and not 1 <= self.semantic_rank <= self.d_semantic:
            raise ValueError("semantic_rank must lie in [1, d_semantic]")
        if self.min_center_distance <= 0:
            raise ValueError("min_center_distance must be positive")


def validate(ds: ZslDataset) -> list[str]:
    """Return one message per violated dataset invariant (empty when valid).

    Every message starts with the invariant's name, e.g. ``"split overlap"``.
    """
    problems: list[str] = []
    n = ds.features.shape[0] if ds.features.ndim == 2 else -1
    if ds.features.ndim != 2:
        problems.append("shape mismatch: features must be a 2-D matrix")
    if ds.class_embeddings.ndim != 2:
        problems.append("shape mismatch: class_embeddings must be a 2-D matrix")
    if ds.labels.ndim != 1 or ds.labels.shape[0] != n:
        problems.append("shape mismatch: labels must have one entry per feature row")
        return problems

    seen, unseen = set(ds.seen_classes), set(ds.unseen_classes)
    shared = seen & unseen
    if shared:
        problems.append(f"split overlap: classes {sorted(shared)} are both seen and unseen")

    n_classes = ds.class_embeddings.shape[0]
    present = np.unique(ds.labels)
    missing = {int(c) for c in present} | seen | unseen
    missing = sorted(c for c in missing if not 0 <= c < n_classes)
    if missing:
        problems.append(f"missing embedding: class ids {missing} have no embedding row")

    splits = {
        "idx_train_seen": ds.idx_train_seen,
        "idx_test_seen": ds.idx_test_seen,
        "idx_test_unseen": ds.idx_test_unseen,
    }
    in_range = True
    for name, idx in splits.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            problems.append(f"index out of range: {name} addresses rows outside [0, {n})")
            in_range = False

    names = list(splits)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            common = np.intersect1d(splits[a], splits[b])
            if common.size:
                problems.append(f"index overlap: {a} and {b} share {common.size} rows")

    if in_range:
        for name, allowed in (("idx_train_seen", seen), ("idx_test_seen", seen),
                              ("idx_test_unseen", unseen)):
            bad = sorted({int(c) for c in ds.labels[splits[name]]} - allowed)
            if bad:
                problems.append(f"split leakage: {name} contains labels {bad} of the wrong split")
    return problems


def _check(ds: ZslDataset) -> ZslDataset:
    problems = validate(ds)
    if problems:
        raise BundleError("; ".join(problems))
    return ds


def write_bundle(ds: ZslDataset, path) -> None:
    """Write ``ds`` as a bundle directory (created if needed)."""
    _check(ds)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"bundle directory is not writable: {path}")
    files = {}
    for name, dtype in _MATRIX_FILES.items():
        arr = np.ascontiguousarray(getattr(ds, name), dtype=dtype)
        fname = f"{name}.bin"
        (path / fname).write_bytes(arr.tobytes(order="C"))
        files[name] = {"file": fname, "dtype": dtype, "shape": list(arr.shape)}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n_samples": ds.n_samples,
        "d_visual": ds.d_visual,
        "d_semantic": ds.d_semantic,
        "class_count": ds.class_count,
        "seen_classes": [int(c) for c in ds.seen_classes],
        "unseen_classes": [int(c) for c in ds.unseen_classes],
        "files": files,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (path / "manifest.json").write_text(text, encoding="utf-8")


def load_bundle(path) -> ZslDataset:
    """Read and validate a bundle directory written by :func:`write_bundle`."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in bundle {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleError(f"unsupported schema_version {manifest.get('schema_version')!r}")

    n, dv, ds_ = manifest["n_samples"], manifest["d_visual"], manifest["d_semantic"]
    expected = {
        "features": [n, dv],
        "class_embeddings": [manifest["class_count"], ds_],
        "labels": [n],
    }
    arrays = {}
    for name, dtype in _MATRIX_FILES.items():
        entry = manifest["files"].get(name)
        if entry is None:
            raise BundleError(f"manifest does not list {name}")
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise FileNotFoundError(f"bundle file missing: {fpath}")
        shape = tuple(entry["shape"])
        if name in expected and list(shape) != expected[name]:
            raise BundleError(
                f"shape mismatch: {name} listed as {list(shape)}, manifest dims imply {expected[name]}")
        raw = np.fromfile(fpath, dtype=dtype)
        if raw.size != int(np.prod(shape)):
            raise BundleError(
                f"shape mismatch: {fpath.name} holds {raw.size} values, manifest says {list(shape)}")
        arrays[name] = raw.reshape(shape).astype(dtype[1:], copy=False)

    ds = ZslDataset(
        seen_classes=tuple(int(c) for c in manifest["seen_classes"]),
        unseen_classes=tuple(int(c) for c in manifest["unseen_classes"]),
        **arrays,
    )
    return _check(ds)


def compute_prototypes(features, labels, class_ids=None) -> PrototypeSet:
    """Per-class mean feature vectors.

    ``class_ids`` restricts (and orders) the classes; by default every label
    present is used in ascending order.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("compute_prototypes needs a nonempty 2-D feature matrix")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must have one entry per feature row")
    ids = np.unique(labels) if class_ids is None else np.asarray(class_ids)

    protos = np.empty((len(ids), features.shape[1]))
    counts = np.empty(len(ids), dtype=np.int64)
    for k, c in enumerate(ids):
        rows = features[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {int(c)} has no samples")
        # column-wise sort makes the sum independent of row order
        protos[k] = np.sort(rows, axis=0).sum(axis=0) / rows.shape[0]
        counts[k] = rows.shape[0]
    return PrototypeSet(class_ids=ids.astype(np.int64), prototypes=protos, counts=counts)


def synthetic_ground_truth(spec: SyntheticSpec):
    """Return ``(embeddings, projection, offset)`` of the toy generator.

    Class ``k`` is centred at ``relu(embeddings[k] @ projection + offset)``.
    """
    return _ground_truth(spec)[:3]


def _ground_truth(spec):
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.n_seen_classes + spec.n_unseen_classes
    rank = spec.rank()
    # correlated attributes: embeddings are linear in a low-dimensional code
    codes = rng.normal(0.0, 1.0, size=(n_classes, rank))
    mixing = rng.normal(0.0, 1.0, size=(rank, spec.d_semantic))
    embeddings = codes @ mixing
    lo, hi = embeddings.min(axis=0), embeddings.max(axis=0)
    embeddings = (embeddings - lo) / np.where(hi > lo, hi - lo, 1.0)
    projection = rng.normal(0.0, 1.0, size=(spec.d_semantic, spec.d_visual))
    raw = embeddings @ projection
    gaps = np.linalg.norm(raw[:, None, :] - raw[None, :, :], axis=-1)
    gaps[np.diag_indices(n_classes)] = np.inf
    projection *= spec.min_center_distance / gaps.min()
    raw = embeddings @ projection
    offset = 1.0 - raw.min(axis=0)
    return embeddings, projection, offset, rng


def generate_synthetic(spec: SyntheticSpec) -> ZslDataset:
    """Gaussian clusters whose centres are a linear image of the class embeddings.

    The map is scaled so the closest pair of centres is
    ``min_center_distance`` apart and offset so every centre is positive.
    Class ids ``0 .. n_seen-1`` are seen, the rest unseen.
    """
    embeddings, projection, offset, rng = _ground_truth(spec)
    n_classes = embeddings.shape[0]
    centers = np.maximum(embeddings @ projection + offset, 0.0)

    per = spec.samples_per_class
    labels = np.repeat(np.arange(n_classes), per)
    noise = rng.normal(0.0, 1.0, size=(labels.size, spec.d_visual))
    features = np.maximum(centers[labels] + spec.cluster_spread * noise, 0.0)

    n_test = max(1, int(round(per * spec.seen_test_fraction)))
    if n_test >= per:
        n_test = per - 1 if per > 1 else 0
    train, test_seen = [], []
    for c in range(spec.n_seen_classes):
        rows = np.arange(c * per, (c + 1) * per)
        rows = rng.permutation(rows)
        test_seen.append(np.sort(rows[:n_test]))
        train.append(np.sort(rows[n_test:]))
    idx_test_unseen = np.arange(spec.n_seen_classes * per, n_classes * per)

    return ZslDataset(
        features=features.astype(np.float32),
        labels=labels.astype(np.int32),
        class_embeddings=embeddings.astype(np.float32),
        seen_classes=tuple(range(spec.n_seen_classes)),
        unseen_classes=tuple(range(spec.n_seen_classes, n_classes)),
        idx_train_seen=np.concatenate(train).astype(np.int32),
        idx_test_seen=np.concatenate(test_seen).astype(np.int32),
        idx_test_unseen=idx_test_unseen.astype(np.int32),
    )
