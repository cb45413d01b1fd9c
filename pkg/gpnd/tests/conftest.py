"""Shared fixtures: a ground-truth linear manifold and a small untrained detector."""

import numpy as np
import pytest

from gpnd.aae import build_aae, linear_aae
from gpnd.data import SyntheticManifoldConfig, generate_synthetic
from gpnd.detector import build_detector


def orthonormal_columns(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((m, n)))
    return q


@pytest.fixture
def linear_manifold():
    """A = Q diag(s) (64 x 4) with known singular values, plus its exact AAE."""
    rng = np.random.default_rng(1234)
    singular_values = np.array([3.0, 2.0, 1.5, 0.5])
    a = orthonormal_columns(rng, 64, 4) * singular_values
    return a, singular_values, linear_aae(a)


@pytest.fixture(scope="module")
def toy_synthetic():
    return generate_synthetic(SyntheticManifoldConfig(n=2, m=16, hidden=8, count=400, classes=2, seed=5))


@pytest.fixture(scope="module")
def toy_detector(toy_synthetic):
    """Untrained dense AAE with densities fitted on class 0 of a 16-dim toy set."""
    inliers = toy_synthetic.dataset.of_class(0).samples
    aae = build_aae(16, 2, hidden_dims=(8,), seed=11)
    return build_detector(aae, inliers, bins=20)
