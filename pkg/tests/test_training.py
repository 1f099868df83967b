import numpy as np
import pytest

from regionblend.denoiser import DenoiserConfig, seeded_init
from regionblend.errors import ConfigError
from regionblend.training import gradient_check, shape_dataset, train_toy

SMALL = DenoiserConfig(image_size=16, widths=(16, 32), emb_dim=32, groups=4)


def test_zero_iterations_keep_weights(model):
    images, prompts = shape_dataset(4)
    out = train_toy(model, images, prompts, 0)
    assert out is not model and out.checksum() == model.checksum()


def test_empty_dataset_rejected(model):
    with pytest.raises(ConfigError):
        train_toy(model, np.zeros((0, 3, 32, 32)), [], 5)


def test_training_reduces_loss():
    model = seeded_init(7, SMALL)
    images, prompts = shape_dataset(48, seed=0, size=16)
    losses = []
    trained = train_toy(model, images, prompts, 200, batch_size=16, lr=2e-3, seed=0, log=losses)
    head, tail = np.mean(losses[:20]), np.mean(losses[-20:])
    assert tail < head, (head, tail)
    assert trained.checksum() != model.checksum()


def test_training_deterministic():
    model = seeded_init(7, SMALL)
    images, prompts = shape_dataset(8, size=16)
    a = train_toy(model, images, prompts, 3, batch_size=4)
    b = train_toy(model, images, prompts, 3, batch_size=4)
    assert a.checksum() == b.checksum()


def test_gradient_check_conv_weight(model):
    rows = gradient_check(model, names=["enc0.res.conv.w", "dec0.res.conv.w"], per_tensor=3)
    assert max(r[4] for r in rows) < 1e-3


def test_gradient_check_small_model_all_tensors():
    rows = gradient_check(seeded_init(1, SMALL), per_tensor=1, seed=3)
    assert len(rows) == len(seeded_init(1, SMALL).params)
    bad = [r for r in rows if r[4] >= 1e-3]
    assert not bad, bad
