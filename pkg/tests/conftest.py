import numpy as np
import pytest

from deepsc.datasets import make_oriented_textures
from deepsc.pipeline import LayerConfig, train_model


def tiny_layers(depth=3, K=8):
    first = LayerConfig(n_atoms=K, alpha=0.15)
    rest = [LayerConfig(n_atoms=K, alpha=0.15, embed_dim=6, epochs=2, pairs_per_image=200)
            for _ in range(depth - 1)]
    return [first] + rest


@pytest.fixture(scope="session")
def textures():
    images, labels = make_oriented_textures(n_per_class=5, size=64, seed=1)
    return images, labels


@pytest.fixture(scope="session")
def trained(textures):
    images, _ = textures
    # 64x64 images reach a 1x1 grid at layer 3, which has no pairs to train on
    with pytest.warns(RuntimeWarning, match="no training pairs"):
        model, codes = train_model(images, tiny_layers(), max_dict_samples=500, seed=4,
                                   return_codes=True)
    return model, codes


@pytest.fixture
def rng():
    return np.random.RandomState(0)


ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} -- {detail}")
