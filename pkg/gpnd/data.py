"""
GPND — Datasets
IDX image ingestion, synthetic manifold generation, seeded splits and
outlier injection.  Every sample lives in [0, 1]^m.
"""

import gzip
import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from gpnd.config import (
    SYNTH_GENERATORS,
    SYNTH_LINEAR_OFFSET,
    SYNTH_NOISE_SIGMA,
    RunConfig,
    derive_seed,
)
from gpnd.errors import ConfigError, DataError, DimensionError, ModelFormatError
from gpnd.nn import ACTIVATIONS, DenseLayer, DenseNetwork, forward, make_rng
from gpnd.persistence import BinaryReader, BinaryWriter, atomic_write_bytes, read_bytes

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATASET_MAGIC = b"GPDS"
DATASET_VERSION = 1

# Per-class offset of synthetic manifolds other than class 0.
_CLASS_SHIFT = 0.15
# Row norm of the linear map: a_i . z ~ N(0, norm^2), so 7 sigma plus the
# largest class shift stays inside the [0, 1] clip around the 0.5 offset.
_LINEAR_ROW_NORM = (0.5 - _CLASS_SHIFT) / 7.0


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray     # (N, m) float64 in [0, 1]
    labels: np.ndarray      # (N,) int64 >= 0

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise DimensionError(f"samples must be (N, m), got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise DimensionError(f"labels shape {self.labels.shape} does not match {self.samples.shape[0]} samples")
        if self.samples.size and (self.samples.min() < 0.0 or self.samples.max() > 1.0):
            raise DataError("samples must lie in [0, 1]")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("labels must be non-negative")

    @classmethod
    def of(cls, samples, labels) -> "Dataset":
        return cls(np.asarray(samples, dtype=np.float64), np.asarray(labels, dtype=np.int64))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def classes(self) -> list[int]:
        return [int(c) for c in np.unique(self.labels)]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.samples[index], self.labels[index])

    def of_class(self, label: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == label))

    def excluding_class(self, label: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels != label))


class LabeledSet(NamedTuple):
    """Test or validation samples with inlier flags (True = inlier)."""

    samples: np.ndarray
    is_inlier: np.ndarray
    n_inliers: int
    n_outliers: int
    picks: np.ndarray       # donor row of each appended outlier


@dataclass(frozen=True)
class SyntheticManifoldConfig:
    n: int = 4
    m: int = 64
    generator: str = "tanh"
    hidden: int = 32
    noise_sigma: float = SYNTH_NOISE_SIGMA
    count: int = 2000
    classes: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n < self.m:
            raise ConfigError(f"synthetic latent dim must satisfy 1 <= n < m, got n={self.n}, m={self.m}")
        if self.generator not in SYNTH_GENERATORS:
            raise ConfigError(f"unknown synthetic generator {self.generator!r}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.count < 1 or self.classes < 1 or self.hidden < 1:
            raise ConfigError("count, classes and hidden must be >= 1")

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "SyntheticManifoldConfig":
        return cls(
            n=config.synth_latent_dim,
            m=config.synth_ambient_dim,
            generator=config.synth_generator,
            hidden=config.synth_hidden,
            noise_sigma=config.synth_noise_sigma,
            count=config.synth_count,
            classes=config.synth_classes,
            seed=config.seed,
        )


class SyntheticDataset(NamedTuple):
    dataset: Dataset
    latents: np.ndarray                     # (N, n) ground-truth z_i
    generators: tuple[DenseNetwork, ...]    # noiseless f_gen per class
    config: SyntheticManifoldConfig


# ─── IDX files ────────────────────────────────────────────────────────────────

def _read_maybe_gzip(path: str) -> bytes:
    try:
        if path.endswith(".gz"):
            with gzip.open(path, "rb") as f:
                return f.read()
        with open(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_idx(data: bytes, magic: int, dims: int, path: str) -> tuple[tuple[int, ...], bytes]:
    header = 4 * (1 + dims)
    if len(data) < header:
        raise DataError(f"{path}: truncated IDX header")
    found, *shape = struct.unpack(f">{1 + dims}I", data[:header])
    if found != magic:
        raise DataError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    size = int(np.prod(shape))
    payload = data[header:]
    if len(payload) < size:
        raise DataError(f"{path}: truncated, expected {size} bytes of data, found {len(payload)}")
    if len(payload) > size:
        raise DataError(f"{path}: {len(payload) - size} unexpected trailing bytes")
    return tuple(shape), payload


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse an IDX image/label pair; ``.gz`` files are decompressed transparently."""
    (count, rows, cols), pixels = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGE_MAGIC, 3, images_path)
    (label_count,), label_bytes = _parse_idx(_read_maybe_gzip(labels_path), IDX_LABEL_MAGIC, 1, labels_path)
    if count != label_count:
        raise DataError(f"{count} images but {label_count} labels")
    samples = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    log.info("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(samples, labels)


def load_corpus(path: str) -> Dataset:
    """A ``.gpds`` synthetic file, or a directory holding train and/or t10k IDX pairs.

    When both IDX pairs are present they are concatenated (train first).
    """
    from gpnd.fetch import find_idx_pair

    if os.path.isfile(path):
        return load_synthetic(path).dataset
    if not os.path.isdir(path):
        raise DataError(f"no dataset at {path}")
    parts = []
    for split_name in ("train", "t10k"):
        pair = find_idx_pair(path, split_name)
        if pair is not None:
            parts.append(load_idx(*pair))
    if not parts:
        raise DataError(f"{path} holds no IDX image/label pair")
    if len(parts) == 1:
        return parts[0]
    if parts[0].m != parts[1].m:
        raise DimensionError("train and t10k images differ in size")
    return Dataset(
        np.concatenate([p.samples for p in parts]),
        np.concatenate([p.labels for p in parts]),
    )


# ─── Synthetic manifolds ──────────────────────────────────────────────────────

def _unit_rows(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _make_generator(config: SyntheticManifoldConfig, label: int) -> DenseNetwork:
    rng = make_rng(derive_seed(config.seed, "synthetic", label))
    shift = np.zeros(config.m) if label == 0 else rng.uniform(-_CLASS_SHIFT, _CLASS_SHIFT, config.m)
    if config.generator == "linear":
        a = _unit_rows(rng.normal(size=(config.m, config.n))) * _LINEAR_ROW_NORM
        return DenseNetwork((DenseLayer(a, SYNTH_LINEAR_OFFSET + shift, "identity"),))
    # (tanh(y) + 1) / 2 == sigmoid(2y), so the squash folds into the output layer.
    w1 = _unit_rows(rng.normal(size=(config.hidden, config.n)))
    w2 = _unit_rows(rng.normal(size=(config.m, config.hidden)))
    b1 = rng.uniform(-0.5, 0.5, config.hidden)
    return DenseNetwork((
        DenseLayer(w1, b1, "tanh"),
        DenseLayer(2.0 * w2, 4.0 * shift, "sigmoid"),
    ))


def generate_synthetic(config: SyntheticManifoldConfig) -> SyntheticDataset:
    """x_i = f_gen(z_i) + noise, clipped to [0, 1]; one generator per class."""
    generators = tuple(_make_generator(config, c) for c in range(config.classes))
    rng = make_rng(derive_seed(config.seed, "synthetic", config.classes))
    counts = [config.count // config.classes + (c < config.count % config.classes)
              for c in range(config.classes)]
    labels = np.repeat(np.arange(config.classes, dtype=np.int64), counts)
    latents = rng.standard_normal((config.count, config.n))
    clean = np.empty((config.count, config.m))
    for c, gen in enumerate(generators):
        rows = labels == c
        if rows.any():
            clean[rows] = forward(gen, latents[rows])[0]
    noisy = clean + config.noise_sigma * rng.standard_normal(clean.shape)
    clipped = int(np.count_nonzero((noisy < 0.0) | (noisy > 1.0)))
    if clipped:
        log.warning("Clipped %d of %d synthetic values to [0, 1]", clipped, noisy.size)
    samples = np.clip(noisy, 0.0, 1.0)
    log.info(
        "Generated %d samples (%s, n=%d, m=%d, sigma=%g, %d classes)",
        config.count, config.generator, config.n, config.m, config.noise_sigma, config.classes,
    )
    return SyntheticDataset(Dataset(samples, labels), latents, generators, config)


def dataset_bytes(synthetic: SyntheticDataset) -> bytes:
    """GPDS layout: u32 N, m, n; f64 samples, latents; u32 labels; JSON blob; generator params."""
    ds, cfg = synthetic.dataset, synthetic.config
    w = BinaryWriter(DATASET_MAGIC, DATASET_VERSION)
    w.u32(len(ds))
    w.u32(ds.m)
    w.u32(cfg.n)
    w.f64_array(ds.samples)
    w.f64_array(synthetic.latents)
    w.u32_array(ds.labels)
    spec = {
        "config": {
            "n": cfg.n, "m": cfg.m, "generator": cfg.generator, "hidden": cfg.hidden,
            "noise_sigma": cfg.noise_sigma, "count": cfg.count, "classes": cfg.classes, "seed": cfg.seed,
        },
        "networks": [gen.spec for gen in synthetic.generators],
    }
    w.blob(json.dumps(spec, sort_keys=True).encode("utf-8"))
    for gen in synthetic.generators:
        for p in gen.parameters():
            w.f64_array(p)
    return w.finish()


def save_synthetic(synthetic: SyntheticDataset, path: str) -> None:
    atomic_write_bytes(path, dataset_bytes(synthetic))
    log.info("Dataset saved to %s", path)


def load_synthetic(path: str) -> SyntheticDataset:
    r = BinaryReader(read_bytes(path), DATASET_MAGIC, DATASET_VERSION, kind="dataset file")
    count, m, n = r.u32(), r.u32(), r.u32()
    samples = r.f64_array(count * m, (count, m))
    latents = r.f64_array(count * n, (count, n))
    labels = r.u32_array(count)
    try:
        spec = json.loads(r.blob().decode("utf-8"))
        config = SyntheticManifoldConfig(**spec["config"])
        generators = []
        for layers in spec["networks"]:
            built = []
            for d_in, d_out, act in layers:
                if act not in ACTIVATIONS:
                    raise ModelFormatError(f"unknown activation {act!r}")
                built.append(DenseLayer(r.f64_array(d_in * d_out, (d_out, d_in)), r.f64_array(d_out), act))
            generators.append(DenseNetwork(tuple(built)))
        r.done()
        return SyntheticDataset(Dataset(samples, labels), latents, tuple(generators), config)
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"inconsistent dataset file {path}: {exc}") from exc


# ─── Splits and outlier injection ─────────────────────────────────────────────

def split(dataset: Dataset, fractions: tuple[float, ...], seed: int) -> tuple[Dataset, ...]:
    """Seeded shuffle, then contiguous parts sized by ``fractions``."""
    fractions = tuple(float(f) for f in fractions)
    if not fractions or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {fractions}")
    n = len(dataset)
    order = make_rng(derive_seed(seed, "split")).permutation(n)
    bounds = [0, *(int(round(b * n)) for b in np.cumsum(fractions)[:-1]), n]
    parts = []
    for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        if hi <= lo and fractions[k] > 0:
            raise DataError(f"{n} samples are too few for split fractions {fractions}")
        parts.append(dataset.subset(order[lo:hi]))
    return tuple(parts)


def outlier_count(n_inliers: int, ratio: float) -> int:
    """round(n * rho / (1 - rho)), halves rounded up."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"outlier ratio must be in (0, 1), got {ratio}")
    return int(np.floor(n_inliers * ratio / (1.0 - ratio) + 0.5))


def inject_outliers(
    inliers: Dataset,
    donors: Dataset,
    ratio: float,
    seed: int | np.random.Generator,
) -> LabeledSet:
    """Append outliers drawn from ``donors`` so that they make up ``ratio`` of the set."""
    count = outlier_count(len(inliers), ratio)
    if len(donors) == 0:
        raise DataError("outlier donor pool is empty")
    if set(donors.classes) & set(inliers.classes):
        raise DataError("outlier donors share a class with the inliers")
    if donors.m != inliers.m:
        raise DimensionError(f"donor dim {donors.m} != inlier dim {inliers.m}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(derive_seed(seed, "outliers"))
    replace_draws = count > len(donors)
    if replace_draws:
        log.warning("Only %d donors for %d outliers; sampling with replacement", len(donors), count)
    picks = rng.choice(len(donors), size=count, replace=replace_draws)
    samples = np.concatenate([inliers.samples, donors.samples[picks]])
    flags = np.concatenate([np.ones(len(inliers), dtype=bool), np.zeros(count, dtype=bool)])
    return LabeledSet(samples, flags, len(inliers), count, picks)


def cap_samples(dataset: Dataset, limit: int, seed: int) -> Dataset:
    """Seeded subsample down to ``limit`` rows (0 keeps everything)."""
    if limit <= 0 or len(dataset) <= limit:
        return dataset
    picks = np.sort(make_rng(seed).choice(len(dataset), size=limit, replace=False))
    return dataset.subset(picks)
