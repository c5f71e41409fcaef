"""
The synthetic toy: clusters whose centres are an affine image of attributes
==========================================================================

Nothing here trains a network. The point is to see what the generator is
asked to learn, and that a nearest-centre rule is close to perfect when the
true centres are known.
"""

import tempfile

import numpy as np

import genzsl
from genzsl.dataset import synthetic_ground_truth

spec = genzsl.SyntheticSpec(n_seen_classes=6, n_unseen_classes=3, d_visual=32, d_semantic=8,
                            samples_per_class=100, cluster_spread=0.15, seed=0)
ds = genzsl.generate_synthetic(spec)
print(ds.features.shape, ds.class_embeddings.shape)
print("seen", ds.seen_classes, "unseen", ds.unseen_classes)
print("train / test-seen / test-unseen rows:",
      len(ds.idx_train_seen), len(ds.idx_test_seen), len(ds.idx_test_unseen))

# the hidden map: centre = embedding @ proj + offset
emb, proj, offset = synthetic_ground_truth(spec)
centres = emb @ proj + offset
gaps = np.linalg.norm(centres[:, None] - centres[None], axis=-1)
np.fill_diagonal(gaps, np.inf)
print("closest pair of centres:", gaps.min().round(3))
print("noise norm per sample ~", round(spec.cluster_spread * np.sqrt(spec.d_visual), 3))

# nearest true centre over all nine classes
d = ((ds.features[:, None, :] - centres[None]) ** 2).sum(-1)
print("nearest-centre accuracy:", np.mean(d.argmin(1) == ds.labels).round(4))

# prototypes from the training rows only
idx = ds.idx_train_seen
protos = genzsl.compute_prototypes(ds.features[idx], ds.labels[idx], ds.seen_classes)
print("prototype error vs true centre:",
      np.abs(protos.prototypes - centres[:6]).max().round(4))

# bundles are raw little-endian matrices plus a JSON manifest
with tempfile.TemporaryDirectory() as tmp:
    genzsl.write_bundle(ds, tmp)
    back = genzsl.load_bundle(tmp)
    print("round trip exact:", np.array_equal(back.features, ds.features))
