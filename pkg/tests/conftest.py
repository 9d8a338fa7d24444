import numpy as np
import pytest
import torch

from pipeinv.datasets import CorpusSplit, LabeledImageSet


def pattern_images(labels, size=28, seed=0, noise=0.1):
    """Class-coded toy digits: class c lights up a distinct horizontal band and vertical bar."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    imgs = rng.uniform(0, noise, size=(len(labels), size, size, 1)).astype(np.float32)
    step = size // 10
    for i, c in enumerate(labels):
        imgs[i, c * step : c * step + step, :, 0] += 0.8
        imgs[i, :, (9 - c) * step : (9 - c) * step + step, 0] += 0.5
    return np.clip(imgs, 0, 1)


def toy_corpus(n_train=200, n_test=50, classes=10, seed=0, size=28) -> CorpusSplit:
    ytr = np.arange(n_train) % classes
    yte = np.arange(n_test) % classes
    return CorpusSplit(
        "toy",
        LabeledImageSet(pattern_images(ytr, size, seed), ytr, classes),
        LabeledImageSet(pattern_images(yte, size, seed + 1), yte, classes),
    )


@pytest.fixture
def corpus():
    return toy_corpus()


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
