"""
GPND — Density Estimation
Offline fits (per-dimension generalized Gaussian for p_Z, histogram of
residual norms) and the log-domain factors of the novelty probability.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln

from gpnd.config import (
    GG_BETA_BOUNDS,
    GG_MIN_SAMPLES,
    HIST_BINS,
    HIST_FLOOR_DIVISOR,
    PERP_EXPONENTS,
    R_MIN_FACTOR,
)
from gpnd.errors import ConfigError, DataError, DimensionError, NumericError

log = logging.getLogger(__name__)

# Fallback r_min when no training residual is strictly positive.
_R_MIN_FALLBACK = 1e-12


# ─── Types ────────────────────────────────────────────────────────────────────

class GeneralizedGaussian(NamedTuple):
    mu: float
    alpha: float
    beta: float
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class LatentDensityModel:
    """Independent generalized Gaussians, one per latent dimension."""

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if not (self.mu.shape == self.alpha.shape == self.beta.shape) or self.mu.ndim != 1:
            raise DimensionError("mu, alpha and beta must be 1-D arrays of equal length")
        params = np.concatenate([self.mu, self.alpha, self.beta])
        if not np.all(np.isfinite(params)):
            raise NumericError("latent density parameters must be finite")
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise DataError("latent density scale and shape must be > 0")

    @property
    def n(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True, eq=False)
class ResidualNormHistogram:
    """Equal-width bins on [0, upper); half-open [lo, hi) lookups."""

    bin_edges: np.ndarray
    densities: np.ndarray
    floor_density: float
    r_min: float

    def __post_init__(self):
        if self.bin_edges.ndim != 1 or self.bin_edges.shape[0] != self.densities.shape[0] + 1:
            raise DimensionError("histogram needs B+1 edges for B densities")
        if self.bin_edges[0] != 0.0 or np.any(np.diff(self.bin_edges) <= 0):
            raise DataError("histogram edges must start at 0 and increase strictly")
        if np.any(self.densities < 0) or not self.floor_density > 0 or not self.r_min > 0:
            raise DataError("histogram densities must be >= 0, floor and r_min > 0")

    @property
    def bins(self) -> int:
        return self.densities.shape[0]

    def log_density(self, r):
        return eval_log_hist(self, r)


class NoveltyScore(NamedTuple):
    log_p_par: float            # log p_W_par(w_par)
    log_p_perp: float           # log p_W_perp(w_perp)
    log_p_x: float              # log_p_par + log_p_perp
    log_pz: float               # log p_Z(z_bar)
    log_det_inv: float          # -sum(log s)
    w_perp_norm: float
    reconstruction_error: float
    degenerate: bool

    def decision_value(self, mode: str) -> float:
        """Value compared against the threshold for one scoring mode."""
        if mode == "complete":
            return self.log_p_x
        if mode == "parallel_only":
            return self.log_p_par
        if mode == "perpendicular_only":
            return self.log_p_perp
        if mode == "pz_only":
            return self.log_pz
        if mode == "reconstruction":
            return -self.reconstruction_error
        raise ConfigError(f"unknown scoring mode: {mode!r}")


# ─── Generalized Gaussian ─────────────────────────────────────────────────────

def log_gamma(x):
    """ln Gamma(x) for x > 0 (scalar or array)."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError(f"log_gamma needs x > 0, got {x!r}")
    out = gammaln(arr)
    return float(out) if out.ndim == 0 else out


def gg_moment_ratio(beta: float) -> float:
    """E|x-mu| / sqrt(E(x-mu)^2) of a generalized Gaussian with shape beta."""
    return float(np.exp(gammaln(2.0 / beta) - 0.5 * (gammaln(1.0 / beta) + gammaln(3.0 / beta))))


def fit_generalized_gaussian(samples: np.ndarray) -> GeneralizedGaussian:
    """Moment-matching fit: mean, then shape by bisection, then scale."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.shape[0] < GG_MIN_SAMPLES:
        raise DataError(f"need at least {GG_MIN_SAMPLES} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite samples")
    mu = float(np.mean(x))
    centered = x - mu
    var = float(np.mean(centered * centered))
    if not var > 0:
        raise DataError("samples have zero variance")
    ratio = float(np.mean(np.abs(centered))) / np.sqrt(var)

    lo, hi = GG_BETA_BOUNDS
    clamped = False
    if ratio <= gg_moment_ratio(lo):
        beta, clamped = lo, True
    elif ratio >= gg_moment_ratio(hi):
        beta, clamped = hi, True
    else:
        beta = bisect(lambda b: gg_moment_ratio(b) - ratio, lo, hi, xtol=1e-12, maxiter=200)
    if clamped:
        log.warning("Moment ratio %.4f outside the achievable range; shape clamped to %.1f", ratio, beta)

    alpha = float(np.sqrt(var * np.exp(gammaln(1.0 / beta) - gammaln(3.0 / beta))))
    return GeneralizedGaussian(mu, alpha, float(beta), clamped)


def fit_latent_density(latents: np.ndarray) -> LatentDensityModel:
    """Fit one generalized Gaussian per column of an (N, n) array."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError(f"latents must be (N, n), got {z.shape}")
    degenerate = [j for j in range(z.shape[1]) if not np.ptp(z[:, j]) > 0]
    if degenerate:
        raise DataError(f"constant encodings in latent dimension(s) {degenerate}")
    fits = [fit_generalized_gaussian(z[:, j]) for j in range(z.shape[1])]
    return LatentDensityModel(
        mu=np.array([f.mu for f in fits]),
        alpha=np.array([f.alpha for f in fits]),
        beta=np.array([f.beta for f in fits]),
    )


def log_pdf_gg(params: LatentDensityModel, z: np.ndarray):
    """Sum over dimensions of the generalized Gaussian log-density.

    ``z`` of shape (n,) gives a float, (N, n) gives an (N,) array.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.n:
        raise DimensionError(f"latent has dim {z.shape[-1]}, density expects {params.n}")
    const = np.log(params.beta) - np.log(2.0 * params.alpha) - gammaln(1.0 / params.beta)
    terms = const - (np.abs(z - params.mu) / params.alpha) ** params.beta
    out = terms.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ─── Residual-norm histogram ──────────────────────────────────────────────────

def build_residual_histogram(
    norms: np.ndarray,
    bins: int = HIST_BINS,
    upper: float | None = None,
) -> ResidualNormHistogram:
    """Density histogram of residual norms on [0, upper).

    ``upper`` defaults to max(norms) * (1 + 1e-6).  Empty bins and
    out-of-range queries later evaluate to ``floor_density``.
    """
    r = np.asarray(norms, dtype=np.float64).ravel()
    if r.shape[0] < 1:
        raise DataError("need at least one residual norm")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise DataError("residual norms must be finite and >= 0")
    if upper is None:
        upper = float(r.max()) * (1.0 + 1e-6)
    if not upper > 0:
        upper = _R_MIN_FALLBACK
    if r.max() >= upper:
        raise DataError(f"upper edge {upper} does not cover the largest norm {r.max()}")

    edges = np.linspace(0.0, upper, bins + 1)
    width = upper / bins
    index = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, bins - 1)
    counts = np.bincount(index, minlength=bins).astype(np.float64)
    n = r.shape[0]
    positive = r[r > 0]
    r_min = float(positive.min()) * R_MIN_FACTOR if positive.size else _R_MIN_FALLBACK
    return ResidualNormHistogram(
        bin_edges=edges,
        densities=counts / (n * width),
        floor_density=1.0 / (n * width * HIST_FLOOR_DIVISOR),
        r_min=r_min,
    )


def eval_log_hist(hist: ResidualNormHistogram, r):
    """ln density of the bin containing r, or ln floor outside support / in empty bins."""
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("residual norm must be >= 0")
    index = np.searchsorted(hist.bin_edges, arr, side="right") - 1
    inside = (index >= 0) & (index < hist.bins)
    dens = np.where(inside, hist.densities[np.clip(index, 0, hist.bins - 1)], 0.0)
    dens = np.where(dens > 0, dens, hist.floor_density)
    out = np.log(dens)
    return float(out) if out.ndim == 0 else out


# ─── Score factors ────────────────────────────────────────────────────────────

def log_parallel_density(s: np.ndarray, log_pz: float) -> float:
    """log |det S^-1| + log p_Z."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise NumericError("singular values must be positive")
    return float(-np.sum(np.log(s)) + log_pz)


def log_sphere_average(r: float, m: int, n: int, r_min: float, exponent: str = "codimension") -> float:
    """Log of Gamma(k/2) / (2 pi^(k/2) r^p), k = m - n.

    p = k uses the codimension, p = k - 1 the sphere surface area.
    """
    if exponent not in PERP_EXPONENTS:
        raise ConfigError(f"unknown perp_exponent: {exponent!r}")
    k = m - n
    if k < 1:
        raise DimensionError(f"need m > n, got m={m}, n={n}")
    power = k if exponent == "codimension" else k - 1
    r_eff = max(float(r), r_min)
    return float(log_gamma(k / 2.0) - np.log(2.0) - (k / 2.0) * np.log(np.pi) - power * np.log(r_eff))


def log_perpendicular_density(
    r: float,
    m: int,
    n: int,
    hist: ResidualNormHistogram,
    exponent: str = "codimension",
) -> float:
    """Sphere-averaged log density of the orthogonal component.

    ``hist`` may be any radial law exposing ``log_density(r)`` and ``r_min``.
    """
    if r < 0:
        raise ValueError("residual norm must be >= 0")
    return log_sphere_average(r, m, n, hist.r_min, exponent) + float(hist.log_density(r))


def assemble_score(log_p_par: float, log_p_perp: float, **components) -> NoveltyScore:
    """Combine both factors; extra components are kept for ablation."""
    if not (np.isfinite(log_p_par) and np.isfinite(log_p_perp)):
        raise NumericError(f"non-finite score factors: {log_p_par}, {log_p_perp}")
    return NoveltyScore(
        log_p_par=float(log_p_par),
        log_p_perp=float(log_p_perp),
        log_p_x=float(log_p_par) + float(log_p_perp),
        log_pz=float(components.get("log_pz", log_p_par)),
        log_det_inv=float(components.get("log_det_inv", 0.0)),
        w_perp_norm=float(components.get("w_perp_norm", 0.0)),
        reconstruction_error=float(components.get("reconstruction_error", 0.0)),
        degenerate=bool(components.get("degenerate", False)),
    )
