"""
GPND — Novelty Detector
Per-sample scoring through the linearized decoder, F1-optimal threshold
search, and the inlier/outlier test.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from gpnd.aae import AaeModel, encode
from gpnd.config import HIST_BINS, JACOBIAN_STEP, MIN_DENSITY_SAMPLES, PERP_EXPONENTS, SCORING_MODES
from gpnd.density import (
    LatentDensityModel,
    NoveltyScore,
    ResidualNormHistogram,
    assemble_score,
    build_residual_histogram,
    fit_latent_density,
    log_parallel_density,
    log_pdf_gg,
    log_perpendicular_density,
)
from gpnd.errors import ConfigError, DataError, DimensionError, NumericError
from gpnd.geometry import linearize, local_coordinates

log = logging.getLogger(__name__)

INLIER = "inlier"
OUTLIER = "outlier"


@dataclass(frozen=True, eq=False)
class DetectorModel:
    """Trained AAE plus fitted densities and the log-domain threshold."""

    aae: AaeModel
    latent_density: LatentDensityModel
    residual_hist: ResidualNormHistogram
    threshold: float | None = None
    scoring_mode: str = "complete"
    jacobian_step: float = JACOBIAN_STEP
    perp_exponent: str = "codimension"

    def __post_init__(self):
        if self.latent_density.n != self.aae.n:
            raise DimensionError(
                f"latent density has {self.latent_density.n} dims, model latent dim is {self.aae.n}"
            )
        if self.scoring_mode not in SCORING_MODES:
            raise ConfigError(f"unknown scoring mode: {self.scoring_mode!r}")
        if self.perp_exponent not in PERP_EXPONENTS:
            raise ConfigError(f"unknown perp_exponent: {self.perp_exponent!r}")
        if not self.jacobian_step > 0:
            raise ConfigError(f"jacobian step must be > 0, got {self.jacobian_step}")

    @property
    def m(self) -> int:
        return self.aae.m

    @property
    def n(self) -> int:
        return self.aae.n

    def with_threshold(self, threshold: float | None) -> "DetectorModel":
        return replace(self, threshold=None if threshold is None else float(threshold))

    def with_mode(self, scoring_mode: str) -> "DetectorModel":
        return replace(self, scoring_mode=scoring_mode)


# ─── Fitting ──────────────────────────────────────────────────────────────────

def fit_densities(
    aae: AaeModel,
    training_inliers: np.ndarray,
    bins: int = HIST_BINS,
    jacobian_step: float = JACOBIAN_STEP,
    threads: int = 1,
) -> tuple[LatentDensityModel, ResidualNormHistogram]:
    """Fit p_Z on g(x_i) and histogram the residual norms at z = g(x_i)."""
    x = np.asarray(training_inliers, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != aae.m:
        raise DimensionError(f"inliers must be (N, {aae.m}), got {x.shape}")
    if x.shape[0] < MIN_DENSITY_SAMPLES:
        raise DataError(f"need at least {MIN_DENSITY_SAMPLES} inliers, got {x.shape[0]}")

    latents = encode(aae, x)
    latent_density = fit_latent_density(latents)

    def residual_norm(i: int) -> float:
        decomposition = linearize(aae.decoder, latents[i], jacobian_step)
        return local_coordinates(x[i], decomposition).w_perp_norm

    norms = np.array(_ordered_map(residual_norm, range(x.shape[0]), threads))
    hist = build_residual_histogram(norms, bins)
    log.info(
        "Fitted densities on %d samples: beta range [%.3f, %.3f], median residual %.4g",
        x.shape[0], latent_density.beta.min(), latent_density.beta.max(), float(np.median(norms)),
    )
    return latent_density, hist


def build_detector(
    aae: AaeModel,
    training_inliers: np.ndarray,
    bins: int = HIST_BINS,
    jacobian_step: float = JACOBIAN_STEP,
    perp_exponent: str = "codimension",
    scoring_mode: str = "complete",
    threads: int = 1,
) -> DetectorModel:
    """DetectorModel with densities fitted and no threshold yet."""
    latent_density, hist = fit_densities(aae, training_inliers, bins, jacobian_step, threads)
    return DetectorModel(
        aae=aae,
        latent_density=latent_density,
        residual_hist=hist,
        scoring_mode=scoring_mode,
        jacobian_step=jacobian_step,
        perp_exponent=perp_exponent,
    )


# ─── Scoring ──────────────────────────────────────────────────────────────────

def score(model: DetectorModel, x: np.ndarray) -> NoveltyScore:
    """Factorized log-probability of one sample."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.m:
        raise DimensionError(f"sample has dim {x.shape[0]}, model expects {model.m}")
    if not np.all(np.isfinite(x)):
        raise NumericError("sample contains non-finite values")

    z_bar = encode(model.aae, x)
    decomposition = linearize(model.aae.decoder, z_bar, model.jacobian_step)
    coords = local_coordinates(x, decomposition)
    log_pz = log_pdf_gg(model.latent_density, z_bar)
    log_p_par = log_parallel_density(decomposition.s, log_pz)
    log_p_perp = log_perpendicular_density(
        coords.w_perp_norm, model.m, model.n, model.residual_hist, model.perp_exponent
    )
    residual = x - decomposition.x_par
    return assemble_score(
        log_p_par,
        log_p_perp,
        log_pz=log_pz,
        log_det_inv=float(-np.sum(np.log(decomposition.s))),
        w_perp_norm=coords.w_perp_norm,
        reconstruction_error=float(residual @ residual),
        degenerate=decomposition.degenerate,
    )


def score_batch(model: DetectorModel, samples: np.ndarray, threads: int = 1) -> list[NoveltyScore]:
    """Score every row; results keep the input order whatever the thread count."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"samples must be (N, m), got {x.shape}")
    scores = _ordered_map(lambda i: score(model, x[i]), range(x.shape[0]), threads)
    degenerate = sum(s.degenerate for s in scores)
    if degenerate:
        log.warning("%d of %d samples had a degenerate jacobian", degenerate, len(scores))
    return scores


def decision_values(scores: list[NoveltyScore], mode: str) -> np.ndarray:
    return np.array([s.decision_value(mode) for s in scores], dtype=np.float64)


# ─── Threshold and decision ───────────────────────────────────────────────────

def select_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold maximizing F1 with inliers positive (score >= gamma => inlier).

    Candidates are -inf, +inf and midpoints of consecutive distinct scores;
    among equal F1 values the largest threshold wins.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise DimensionError("scores and labels differ in length")
    if y.all() or not y.any():
        raise DataError("threshold search needs both inliers and outliers")
    if not np.all(np.isfinite(s)):
        raise NumericError("scores must be finite")

    distinct = np.unique(s)
    candidates = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]])
    inl = np.sort(s[y])
    out = np.sort(s[~y])
    tp = inl.shape[0] - np.searchsorted(inl, candidates, side="left")
    fp = out.shape[0] - np.searchsorted(out, candidates, side="left")
    fn = inl.shape[0] - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(tp > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    best = np.flatnonzero(f1 == f1.max())[-1]
    return float(candidates[best])


def calibrate(
    model: DetectorModel,
    samples: np.ndarray,
    is_inlier: np.ndarray,
    threads: int = 1,
) -> DetectorModel:
    """Score a labelled validation set and store the F1-optimal threshold."""
    values = decision_values(score_batch(model, samples, threads), model.scoring_mode)
    gamma = select_threshold(values, is_inlier)
    log.info("Selected threshold %.6g for mode %s", gamma, model.scoring_mode)
    return model.with_threshold(gamma)


def decide(value: float, threshold: float) -> str:
    return INLIER if value >= threshold else OUTLIER


def classify(model: DetectorModel, x: np.ndarray) -> str:
    """Inlier when the decision value reaches the threshold."""
    if model.threshold is None:
        raise DataError("model has no threshold; calibrate it first")
    return decide(score(model, x).decision_value(model.scoring_mode), model.threshold)


# ─── Internal helpers ─────────────────────────────────────────────────────────

def _ordered_map(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
