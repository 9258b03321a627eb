import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_cfg():
    from hepaseg.config import ModelConfig

    # smallest legal network: 16px input, two stages, bottleneck 4x4x8
    return ModelConfig(
        base_filters=4,
        stages=2,
        input_size=16,
        reduction=4,
        heads=2,
        kernel_bank=2,
        epochs=1,
        batch_size=2,
        augment=False,
    )
