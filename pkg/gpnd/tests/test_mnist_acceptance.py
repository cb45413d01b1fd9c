"""Desk-scale MNIST run; slow, so only active when GPND_MNIST_DIR points at the IDX files."""

import os

import pytest

from gpnd.config import RunConfig
from gpnd.data import load_corpus
from gpnd.protocol import run_protocol

MNIST_DIR = os.getenv("GPND_MNIST_DIR", "").strip()

pytestmark = pytest.mark.skipif(not MNIST_DIR, reason="GPND_MNIST_DIR not set")


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(MNIST_DIR)


@pytest.mark.parametrize("digit", [1, 7, 9])
def test_half_outliers(corpus, digit):
    config = RunConfig(preset="desk", epochs=20, max_train_samples=2000, ratios=(0.5,), folds=5, seed=1)
    report = run_protocol(corpus, digit, config, threads=os.cpu_count() or 1)
    assert report.mean("f1", "complete", 0.5) >= 0.85
    assert report.mean("auroc", "complete", 0.5) >= 0.90


ABLATION_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)


def test_ablation_ordering_at_every_ratio(corpus):
    config = RunConfig(
        preset="desk", epochs=20, max_train_samples=2000, ratios=ABLATION_RATIOS, folds=5, ablation=True, seed=1,
    )
    report = run_protocol(corpus, 7, config, threads=os.cpu_count() or 1)
    for ratio in ABLATION_RATIOS:
        complete = report.mean("f1", "complete", ratio)
        parallel = report.mean("f1", "parallel_only", ratio)
        assert complete >= parallel - 0.01, ratio
        assert complete >= report.mean("f1", "perpendicular_only", ratio) - 0.01, ratio
        assert parallel >= report.mean("f1", "pz_only", ratio), ratio
