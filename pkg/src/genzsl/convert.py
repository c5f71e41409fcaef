"""Convert the common ``res101.mat`` + ``att_splits.mat`` benchmark layout to a bundle.

Feature files store features as ``d_visual x n`` and labels 1-based; split
files store attributes as ``d_semantic x n_classes`` and 1-based row
locations ``trainval_loc``, ``test_seen_loc`` and ``test_unseen_loc``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import loadmat

from .dataset import BundleError, ZslDataset, _check

__all__ = ["bundle_from_mat"]


def _field(mat, name, path):
    if name not in mat:
        raise BundleError(f"{path}: missing variable {name!r}")
    return np.asarray(mat[name])


def bundle_from_mat(features_path, splits_path) -> ZslDataset:
    features_path, splits_path = Path(features_path), Path(splits_path)
    for p in (features_path, splits_path):
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {p}")
    fm = loadmat(features_path)
    sm = loadmat(splits_path)
    x = _field(fm, "features", features_path).T.astype(np.float32)
    labels = _field(fm, "labels", features_path).ravel().astype(np.int64) - 1
    att = _field(sm, "att", splits_path).T.astype(np.float32)
    loc = {k: _field(sm, k, splits_path).ravel().astype(np.int64) - 1
           for k in ("trainval_loc", "test_seen_loc", "test_unseen_loc")}
    if len(labels) != len(x):
        raise BundleError("features and labels disagree on sample count")

    seen = tuple(sorted({int(c) for c in labels[loc["trainval_loc"]]}))
    unseen = tuple(sorted({int(c) for c in labels[loc["test_unseen_loc"]]}))
    ds = ZslDataset(
        features=x, labels=labels, class_embeddings=att,
        seen_classes=seen, unseen_classes=unseen,
        idx_train_seen=loc["trainval_loc"], idx_test_seen=loc["test_seen_loc"],
        idx_test_unseen=loc["test_unseen_loc"])
    return _check(ds)
