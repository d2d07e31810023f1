import numpy as np
import pytest
import torch

from posediff.denoiser import UNetConfig
from posediff.motion_data import PoseDataset, Skeleton, SyntheticSpec, generate_synthetic
from posediff.training import TrainConfig

torch.set_num_threads(1)

TINY_UNET = UNetConfig(channels=(2, 8, 2), cond_dim=8)


def tiny_config(**kw):
    base = dict(epochs=1, lr=1e-3, batch_size=32, unet=TINY_UNET, enc_width=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_train():
    tracks, labels = generate_synthetic(SyntheticSpec(n_actors=2, n_frames=30, seed=3))
    return PoseDataset(tracks, labels, Skeleton())


@pytest.fixture(scope="session")
def tiny_test():
    spec = SyntheticSpec(n_actors=2, n_frames=40, seed=4, injectors=({"kind": "freeze", "rate": 0.4},),
                         segment_length=8)
    tracks, labels = generate_synthetic(spec)
    return PoseDataset(tracks, labels, Skeleton())


@pytest.fixture(scope="session")
def tiny_state(tiny_train):
    from posediff.training import fit

    return fit(tiny_config(epochs=2, batch_size=16), tiny_train)
