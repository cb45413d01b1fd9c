"""
GPND — Evaluation Metrics
F1 at a threshold, AUROC, FPR at 95% TPR, detection error and AUPR-In/Out.
Inliers are the positive class; a sample is predicted inlier iff score >= gamma.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score

from gpnd.config import TPR_TARGET
from gpnd.errors import DataError, DimensionError, NumericError


@dataclass(frozen=True, eq=False)
class ScoredSet:
    scores: np.ndarray      # (N,) finite
    is_inlier: np.ndarray   # (N,) bool

    def __post_init__(self):
        if self.scores.ndim != 1 or self.scores.shape != self.is_inlier.shape:
            raise DimensionError("scores and labels must be 1-D arrays of equal length")
        if self.scores.shape[0] < 1:
            raise DataError("a scored set needs at least one sample")
        if not np.all(np.isfinite(self.scores)):
            raise NumericError("scores must be finite")

    @classmethod
    def of(cls, scores, is_inlier) -> "ScoredSet":
        return cls(np.asarray(scores, dtype=np.float64).ravel(), np.asarray(is_inlier, dtype=bool).ravel())

    @property
    def inlier_scores(self) -> np.ndarray:
        return self.scores[self.is_inlier]

    @property
    def outlier_scores(self) -> np.ndarray:
        return self.scores[~self.is_inlier]

    def require_both(self) -> None:
        if self.is_inlier.all() or not self.is_inlier.any():
            raise DataError("metric needs both inliers and outliers")


@dataclass(frozen=True)
class MetricsReport:
    f1: float
    auroc: float
    fpr_at_95tpr: float
    detection_error: float
    aupr_in: float
    aupr_out: float
    threshold: float
    n_inliers: int
    n_outliers: int
    ratio: float
    fold: int = 0
    mode: str = "complete"

    def as_dict(self) -> dict:
        return asdict(self)


# ── Public API ────────────────────────────────────────────────────────────────

def f1(scored: ScoredSet, threshold: float) -> float:
    """2TP / (2TP + FP + FN); 0 when nothing is predicted inlier correctly."""
    scored.require_both()
    predicted = scored.scores >= threshold
    tp = int(np.count_nonzero(predicted & scored.is_inlier))
    fp = int(np.count_nonzero(predicted & ~scored.is_inlier))
    fn = int(np.count_nonzero(~predicted & scored.is_inlier))
    return 2.0 * tp / (2 * tp + fp + fn) if tp else 0.0


def auroc(scored: ScoredSet) -> float:
    """P(inlier score > outlier score), ties counted as one half (rank-sum form)."""
    scored.require_both()
    ranks = rankdata(scored.scores)  # average ranks resolve ties as 1/2
    n_in = int(np.count_nonzero(scored.is_inlier))
    n_out = scored.scores.shape[0] - n_in
    u = ranks[scored.is_inlier].sum() - n_in * (n_in + 1) / 2.0
    return float(u / (n_in * n_out))


def operating_point(scored: ScoredSet, tpr_target: float = TPR_TARGET) -> tuple[float, float, float]:
    """(gamma, TPR, FPR) at the largest gamma whose TPR reaches ``tpr_target``."""
    scored.require_both()
    inl = np.sort(scored.inlier_scores)[::-1]
    n_in = inl.shape[0]
    k = max(1, int(np.ceil(tpr_target * n_in)))
    while k < n_in and k / n_in < tpr_target:
        k += 1
    while k > 1 and (k - 1) / n_in >= tpr_target:
        k -= 1
    gamma = float(inl[k - 1])
    tpr = np.count_nonzero(inl >= gamma) / n_in
    fpr = np.count_nonzero(scored.outlier_scores >= gamma) / scored.outlier_scores.shape[0]
    return gamma, float(tpr), float(fpr)


def fpr_at_tpr(scored: ScoredSet, tpr_target: float = TPR_TARGET) -> float:
    return operating_point(scored, tpr_target)[2]


def detection_error(scored: ScoredSet, tpr_target: float = TPR_TARGET) -> float:
    """0.5 (1 - TPR) + 0.5 FPR at the fpr_at_tpr operating point."""
    _, tpr, fpr = operating_point(scored, tpr_target)
    return 0.5 * (1.0 - tpr) + 0.5 * fpr


def aupr(scored: ScoredSet, positives: str = "inlier") -> float:
    """Step-wise average precision; outlier positives use negated scores."""
    scored.require_both()
    if positives == "inlier":
        return float(average_precision_score(scored.is_inlier, scored.scores))
    if positives == "outlier":
        return float(average_precision_score(~scored.is_inlier, -scored.scores))
    raise ValueError(f"positives must be 'inlier' or 'outlier', got {positives!r}")


def compute_metrics(
    scored: ScoredSet,
    threshold: float,
    ratio: float = 0.0,
    fold: int = 0,
    mode: str = "complete",
) -> MetricsReport:
    """All six metrics for one scored set at a fixed threshold."""
    return MetricsReport(
        f1=f1(scored, threshold),
        auroc=auroc(scored),
        fpr_at_95tpr=fpr_at_tpr(scored),
        detection_error=detection_error(scored),
        aupr_in=aupr(scored, "inlier"),
        aupr_out=aupr(scored, "outlier"),
        threshold=float(threshold),
        n_inliers=int(np.count_nonzero(scored.is_inlier)),
        n_outliers=int(np.count_nonzero(~scored.is_inlier)),
        ratio=float(ratio),
        fold=int(fold),
        mode=mode,
    )
