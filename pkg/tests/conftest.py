import numpy as np
import pytest

from genzsl.dataset import SyntheticSpec, generate_synthetic
from genzsl.model import ModelConfig, init_params


@pytest.fixture(scope="session")
def toy_ds():
    return generate_synthetic(SyntheticSpec(n_seen_classes=4, n_unseen_classes=2, d_visual=12,
                                            d_semantic=5, samples_per_class=30, seed=3))


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d_visual=6, d_semantic=4, n_seen_classes=3, d_noise=3, g_hidden=7,
                       d_hidden=5, dprime_hidden=4, phi_hidden=6, init_seed=11)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model_for(ds, **kw):
    widths = dict(g_hidden=16, d_hidden=16, dprime_hidden=8, phi_hidden=16, init_seed=1)
    widths.update(kw)
    return ModelConfig(d_visual=ds.d_visual, d_semantic=ds.d_semantic,
                       n_seen_classes=len(ds.seen_classes), **widths)
