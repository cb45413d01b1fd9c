"""
GPND — Evaluation Protocol
Per-class cross-validation: contiguous folds after a seeded shuffle, one
detector per fold, thresholds chosen on validation data with simulated
outliers, and test metrics at every outlier ratio and scoring mode.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gpnd.aae import LossRecord, TrainingConfig, build_aae, train
from gpnd.config import ABLATION_MODES, RunConfig, derive_seed
from gpnd.data import Dataset, cap_samples, inject_outliers, outlier_count
from gpnd.density import NoveltyScore
from gpnd.detector import DetectorModel, build_detector, decision_values, score_batch, select_threshold
from gpnd.errors import DataError
from gpnd.metrics import MetricsReport, ScoredSet, compute_metrics
from gpnd.nn import make_rng

log = logging.getLogger(__name__)

# Mode label of the variational baseline detector in reports.
BASELINE_MODE = "vae"
SUMMARY_METRICS = ("f1", "auroc", "fpr_at_95tpr", "detection_error", "aupr_in", "aupr_out")


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FoldSplit:
    train: Dataset
    validation: Dataset
    test: Dataset


@dataclass
class ProtocolReport:
    inlier_class: int
    seed: int
    folds: int
    ratios: tuple[float, ...]
    modes: tuple[str, ...]
    entries: list[MetricsReport] = field(default_factory=list)

    def select(self, mode: str, ratio: float) -> list[MetricsReport]:
        return [e for e in self.entries if e.mode == mode and e.ratio == ratio]

    def summary(self) -> list[dict]:
        """Mean and population std of every metric per (mode, ratio)."""
        rows = []
        for mode in self.modes:
            for ratio in self.ratios:
                picked = self.select(mode, ratio)
                if not picked:
                    continue
                row = {"mode": mode, "ratio": ratio, "folds": len(picked)}
                for name in SUMMARY_METRICS:
                    values = np.array([getattr(e, name) for e in picked])
                    row[f"{name}_mean"] = float(values.mean())
                    row[f"{name}_std"] = float(values.std())
                rows.append(row)
        return rows

    def mean(self, metric: str, mode: str, ratio: float) -> float:
        return float(np.mean([getattr(e, metric) for e in self.select(mode, ratio)]))

    def to_dict(self) -> dict:
        return {
            "inlier_class": self.inlier_class,
            "seed": self.seed,
            "folds": self.folds,
            "ratios": list(self.ratios),
            "modes": list(self.modes),
            "entries": [e.as_dict() for e in self.entries],
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ─── Splits ───────────────────────────────────────────────────────────────────

def fold_partition(
    inliers: Dataset,
    folds: int,
    fold: int,
    seed: int,
    use_validation: bool = True,
) -> FoldSplit:
    """Block ``fold`` is the test set, block ``fold + 1`` validation, the rest training.

    Without validation the training set doubles as the validation set.
    """
    if len(inliers) < folds:
        raise DataError(f"class has {len(inliers)} samples, too few for {folds} folds")
    if not 0 <= fold < folds:
        raise DataError(f"fold {fold} out of range for {folds} folds")
    order = make_rng(derive_seed(seed, "split")).permutation(len(inliers))
    blocks = np.array_split(order, folds)
    val_block = (fold + 1) % folds
    held_out = {fold, val_block} if use_validation else {fold}
    train_idx = np.concatenate([b for k, b in enumerate(blocks) if k not in held_out])
    train_set = inliers.subset(train_idx)
    validation = inliers.subset(blocks[val_block]) if use_validation else train_set
    return FoldSplit(train_set, validation, inliers.subset(blocks[fold]))




def check_split_sizes(inliers: Dataset, inlier_class: int, config: RunConfig) -> None:
    """Every test and validation block must receive at least one outlier."""
    if len(inliers) < config.folds:
        raise DataError(f"class {inlier_class} has {len(inliers)} samples, too few for {config.folds} folds")
    smallest = len(inliers) // config.folds
    needed = [("test", r) for r in config.ratios]
    if config.use_validation:
        val_ratios = config.ratios if config.validation_ratio is None else (config.validation_ratio,)
        needed += [("validation", r) for r in val_ratios]
    for block, ratio in needed:
        if outlier_count(smallest, ratio) < 1:
            raise DataError(
                f"class {inlier_class} too small for split: a {block} block of {smallest} inliers "
                f"gets no outliers at ratio {ratio}"
            )


# ─── Fitting ──────────────────────────────────────────────────────────────────

def fit_detector(
    train_set: Dataset,
    config: RunConfig,
    index: int = 0,
    threads: int = 1,
) -> tuple[DetectorModel, list[LossRecord]]:
    """Train an AAE (or VAE) on ``train_set`` and fit the densities; no threshold yet."""
    aae = build_aae(
        train_set.m,
        config.latent_dim,
        config.hidden_dims,
        derive_seed(config.seed, "init", index),
        variational=config.model_kind == "vae",
    )
    aae, history = train(aae, train_set.samples, TrainingConfig.from_run_config(config, index))
    model = build_detector(
        aae,
        train_set.samples,
        bins=config.hist_bins,
        jacobian_step=config.jacobian_step,
        perp_exponent=config.perp_exponent,
        scoring_mode=config.scoring_mode,
        threads=threads,
    )
    return model, history


class _ScoredDetector:
    """One fold's model with its inlier scores and cached donor scores."""

    def __init__(self, model: DetectorModel, modes: tuple[str, ...], label: str | None, threads: int):
        self.modes = modes
        self.label = label              # reported instead of the scoring mode
        self._model = model
        self._threads = threads
        self._donor_scores: dict[int, NoveltyScore] = {}
        self.validation: list[NoveltyScore] = []
        self.test: list[NoveltyScore] = []

    def score_rows(self, samples: np.ndarray) -> list[NoveltyScore]:
        return score_batch(self._model, samples, self._threads)

    def donor_scores(self, donors: Dataset, picks: np.ndarray) -> list[NoveltyScore]:
        missing = sorted({int(i) for i in picks} - self._donor_scores.keys())
        if missing:
            fresh = score_batch(self._model, donors.samples[missing], self._threads)
            self._donor_scores.update(zip(missing, fresh))
        return [self._donor_scores[int(i)] for i in picks]


# ─── Public API ───────────────────────────────────────────────────────────────

def run_fold(
    corpus: Dataset,
    inlier_class: int,
    fold: int,
    config: RunConfig,
    threads: int = 1,
) -> list[MetricsReport]:
    """One fold: train, pick a threshold per (ratio, mode) on validation, score the test set."""
    inliers = corpus.of_class(inlier_class)
    donors = corpus.excluding_class(inlier_class)
    check_split_sizes(inliers, inlier_class, config)
    parts = fold_partition(inliers, config.folds, fold, config.seed, config.use_validation)
    train_set = cap_samples(parts.train, config.max_train_samples, derive_seed(config.seed, "split", fold + 1))
    log.info(
        "Fold %d/%d class %d: train=%d validation=%d test=%d",
        fold + 1, config.folds, inlier_class, len(train_set), len(parts.validation), len(parts.test),
    )
    validation = parts.validation if config.use_validation else train_set
    modes = ABLATION_MODES if config.ablation else (config.scoring_mode,)
    model, _ = fit_detector(train_set, config, fold, threads)
    detectors = [_ScoredDetector(model, modes, None, threads)]
    if config.baselines:
        vae_config = config.with_overrides(model_kind="vae", scoring_mode="complete")
        vae_model, _ = fit_detector(train_set, vae_config, fold, threads)
        detectors.append(_ScoredDetector(vae_model, ("complete",), BASELINE_MODE, threads))
    for det in detectors:
        det.validation = det.score_rows(validation.samples)
        det.test = det.score_rows(parts.test.samples)

    reports = []
    for r_index, ratio in enumerate(config.ratios):
        stream = fold * len(config.ratios) + r_index
        val_ratio = ratio if config.validation_ratio is None else config.validation_ratio
        val_set = inject_outliers(validation, donors, val_ratio, make_rng(derive_seed(config.seed, "validation", stream)))
        test_set = inject_outliers(parts.test, donors, ratio, make_rng(derive_seed(config.seed, "outliers", stream)))
        for det in detectors:
            val_scores = det.validation + det.donor_scores(donors, val_set.picks)
            test_scores = det.test + det.donor_scores(donors, test_set.picks)
            for mode in det.modes:
                gamma = select_threshold(decision_values(val_scores, mode), val_set.is_inlier)
                scored = ScoredSet.of(decision_values(test_scores, mode), test_set.is_inlier)
                label = det.label or mode
                report = compute_metrics(scored, gamma, ratio=ratio, fold=fold, mode=label)
                log.info(
                    "Fold %d ratio %.2f mode %s: F1=%.4f AUROC=%.4f",
                    fold + 1, ratio, label, report.f1, report.auroc,
                )
                reports.append(report)
    return reports


def run_protocol(
    corpus: Dataset,
    inlier_class: int,
    config: RunConfig,
    threads: int = 1,
) -> ProtocolReport:
    """Every fold, ratio and mode; folds run in parallel when ``threads`` > 1."""
    if len(corpus.classes) < 2:
        raise DataError("evaluation needs a corpus with at least two classes")
    if inlier_class not in corpus.classes:
        raise DataError(f"class {inlier_class} is not in the corpus (classes {corpus.classes})")
    check_split_sizes(corpus.of_class(inlier_class), inlier_class, config)
    modes = ABLATION_MODES if config.ablation else (config.scoring_mode,)
    if config.baselines:
        modes = (*modes, BASELINE_MODE)
    folds = range(config.folds)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, config.folds)) as pool:
            per_fold = list(pool.map(lambda k: run_fold(corpus, inlier_class, k, config), folds))
    else:
        per_fold = [run_fold(corpus, inlier_class, k, config) for k in folds]

    report = ProtocolReport(inlier_class, config.seed, config.folds, tuple(config.ratios), tuple(modes))
    for reports in per_fold:
        report.entries.extend(reports)
    return report
