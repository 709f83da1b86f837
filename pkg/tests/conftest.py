import pytest

from dpit.harness.config import load_config

# smallest architecture the harness accepts: 4 pyramid levels, general priors at levels 2 and 3
TINY = {
    "image_size": 16,
    "epochs": 2,
    "batch_size": 2,
    "accumulate": 1,
    "lr": 1e-3,
    "llcn.widths": [4, 8],
    "network.channels": [4, 8, 8, 8],
    "network.window_size": 2,
    "network.num_heads": 1,
    "data.synthetic_count": 4,
    "data.val_count": 2,
    "data.samples_per_epoch": None,
}


def tiny_config(stage="llcn", **overrides):
    """Seeded desk-scale config that trains in about a second per epoch."""
    ov = dict(TINY)
    ov.update({k.replace("__", "."): v for k, v in overrides.items()})
    ov.setdefault("seed", 0)
    return load_config(None, ov, stage=stage)


@pytest.fixture
def tiny():
    return tiny_config
