"""
GPND — Model Files
Bit-exact save/load of a DetectorModel.

Layout after the "GPND" magic and u32 version 1 (all little-endian):
  u32 m, u32 n, u32 B (histogram bins), u32 scoring mode, u32 perp exponent
  4 x network header: u32 layer count, then (u32 in, u32 out, u32 activation) per layer
  f64 arrays per network and layer: weight (out x in, row-major), bias
  f64 mu[n], alpha[n], beta[n], bin_edges[B+1], densities[B], floor, r_min
  f64 jacobian step, u8 has-threshold, f64 threshold
  u64 checksum
"""

import logging

import numpy as np

from gpnd.aae import AaeModel
from gpnd.config import PERP_EXPONENTS, SCORING_MODES
from gpnd.density import LatentDensityModel, ResidualNormHistogram
from gpnd.detector import DetectorModel
from gpnd.errors import GpndError, ModelFormatError
from gpnd.nn import ACTIVATIONS, DenseLayer, DenseNetwork
from gpnd.persistence import BinaryReader, BinaryWriter, atomic_write_bytes, read_bytes

log = logging.getLogger(__name__)

MODEL_MAGIC = b"GPND"
MODEL_VERSION = 1
_NETWORKS = ("encoder", "decoder", "disc_z", "disc_x")


def model_bytes(model: DetectorModel) -> bytes:
    """Serialized form of ``model``."""
    w = BinaryWriter(MODEL_MAGIC, MODEL_VERSION)
    hist = model.residual_hist
    w.u32(model.m)
    w.u32(model.n)
    w.u32(hist.bins)
    w.u32(SCORING_MODES.index(model.scoring_mode))
    w.u32(PERP_EXPONENTS.index(model.perp_exponent))

    nets = [getattr(model.aae, name) for name in _NETWORKS]
    for net in nets:
        w.u32(len(net.layers))
        for layer in net.layers:
            w.u32(layer.in_dim)
            w.u32(layer.out_dim)
            w.u32(ACTIVATIONS.index(layer.activation))
    for net in nets:
        for layer in net.layers:
            w.f64_array(layer.weight)
            w.f64_array(layer.bias)

    density = model.latent_density
    for arr in (density.mu, density.alpha, density.beta, hist.bin_edges, hist.densities):
        w.f64_array(arr)
    w.f64(hist.floor_density)
    w.f64(hist.r_min)
    w.f64(model.jacobian_step)
    w.u8(model.threshold is not None)
    w.f64(0.0 if model.threshold is None else model.threshold)
    return w.finish()


def save_model(model: DetectorModel, path: str) -> None:
    atomic_write_bytes(path, model_bytes(model))
    log.info("Model saved to %s", path)


def load_model(path: str) -> DetectorModel:
    return model_from_bytes(read_bytes(path))


def model_from_bytes(data: bytes) -> DetectorModel:
    """Parse and validate; raises ModelFormatError on any inconsistency."""
    r = BinaryReader(data, MODEL_MAGIC, MODEL_VERSION, kind="model file")
    m, n, bins = r.u32(), r.u32(), r.u32()
    mode_index, exponent_index = r.u32(), r.u32()
    if mode_index >= len(SCORING_MODES) or exponent_index >= len(PERP_EXPONENTS):
        raise ModelFormatError("model file has an unknown scoring mode or exponent code")

    specs = []
    for name in _NETWORKS:
        layers = []
        for _ in range(r.u32()):
            d_in, d_out, act = r.u32(), r.u32(), r.u32()
            if act >= len(ACTIVATIONS):
                raise ModelFormatError(f"{name}: unknown activation code {act}")
            layers.append((d_in, d_out, ACTIVATIONS[act]))
        specs.append(layers)

    try:
        networks = []
        for layers in specs:
            built = []
            for d_in, d_out, act in layers:
                weight = r.f64_array(d_in * d_out, (d_out, d_in))
                bias = r.f64_array(d_out)
                built.append(DenseLayer(weight, bias, act))
            networks.append(DenseNetwork(tuple(built)))
        aae = AaeModel(*networks)
        if (aae.m, aae.n) != (m, n):
            raise ModelFormatError(f"header dims ({m}, {n}) disagree with networks ({aae.m}, {aae.n})")

        density = LatentDensityModel(r.f64_array(n), r.f64_array(n), r.f64_array(n))
        edges, densities = r.f64_array(bins + 1), r.f64_array(bins)
        hist = ResidualNormHistogram(edges, densities, r.f64(), r.f64())
        step = r.f64()
        has_threshold, threshold = r.u8(), r.f64()
        r.done()
        return DetectorModel(
            aae=aae,
            latent_density=density,
            residual_hist=hist,
            threshold=threshold if has_threshold else None,
            scoring_mode=SCORING_MODES[mode_index],
            jacobian_step=step,
            perp_exponent=PERP_EXPONENTS[exponent_index],
        )
    except ModelFormatError:
        raise
    except GpndError as exc:
        raise ModelFormatError(f"inconsistent model file: {exc}") from exc
