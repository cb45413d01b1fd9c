"""
GPND — Command Line
Subcommands generate, train, score, eval and fetch.  Every output is written
atomically; exit codes are 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import io
import json
import logging
import os

from gpnd.aae import format_loss_table
from gpnd.config import SCORING_MODES, RunConfig, derive_seed, load_run_config
from gpnd.data import (
    SyntheticManifoldConfig,
    cap_samples,
    dataset_bytes,
    generate_synthetic,
    inject_outliers,
    load_corpus,
)
from gpnd.detector import OUTLIER, calibrate, decide, score_batch
from gpnd.errors import ConfigError, GpndError
from gpnd.fetch import DATASET_URLS, fetch_dataset
from gpnd.model_io import load_model, save_model
from gpnd.nn import make_rng
from gpnd.persistence import atomic_write_group, atomic_write_text, checksum
from gpnd.protocol import fit_detector, fold_partition, run_protocol
from gpnd.results_db import ResultsDatabase

log = logging.getLogger(__name__)

SCORE_COLUMNS = ("index", "log_p_par", "log_p_perp", "log_p_x", "decision_value", "decision")


class _Parser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting with status 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# ─── Commands ─────────────────────────────────────────────────────────────────

def _run_config(args) -> RunConfig:
    config = load_run_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["scoring_mode"] = args.mode
    return config.with_overrides(**overrides) if overrides else config


def cmd_generate(args) -> int:
    """Synthetic dataset plus a JSON manifest next to it."""
    config = _run_config(args)
    synthetic = generate_synthetic(SyntheticManifoldConfig.from_run_config(config))
    payload = dataset_bytes(synthetic)
    manifest = {
        "file": os.path.basename(args.out),
        "checksum": f"{checksum(payload):016x}",
        "count": len(synthetic.dataset),
        "ambient_dim": synthetic.dataset.m,
        "latent_dim": synthetic.config.n,
        "generator": synthetic.config.generator,
        "noise_sigma": synthetic.config.noise_sigma,
        "classes": synthetic.config.classes,
        "seed": synthetic.config.seed,
    }
    manifest_text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    atomic_write_group([(args.out, payload), (args.out + ".json", manifest_text.encode("utf-8"))])
    log.info("Wrote %s and its manifest", args.out)
    return 0


def cmd_train(args) -> int:
    """Train on fold 0 of the inlier class, calibrate on its validation block, save."""
    config = _run_config(args)
    corpus = load_corpus(args.data)
    inliers = corpus.of_class(args.inlier_class)
    parts = fold_partition(inliers, config.folds, 0, config.seed, config.use_validation)
    train_set = cap_samples(parts.train, config.max_train_samples, derive_seed(config.seed, "split", 1))
    model, history = fit_detector(train_set, config, 0, args.threads)
    print(format_loss_table(history))

    donors = corpus.excluding_class(args.inlier_class)
    if len(donors):
        validation = parts.validation if config.use_validation else train_set
        ratio = config.validation_ratio if config.validation_ratio is not None else max(config.ratios)
        labeled = inject_outliers(
            validation, donors, ratio, make_rng(derive_seed(config.seed, "validation"))
        )
        model = calibrate(model, labeled.samples, labeled.is_inlier, args.threads)
    else:
        log.warning("Corpus has no other class; model saved without a threshold")
    save_model(model, args.out)
    return 0


def cmd_score(args) -> int:
    """One CSV row per input sample, in input order."""
    model = load_model(args.model)
    samples = load_corpus(args.data).samples
    mode = args.mode or model.scoring_mode
    threshold = model.threshold if mode == model.scoring_mode else None
    if model.threshold is not None and threshold is None:
        log.warning("Threshold was calibrated for mode %s; decisions left blank", model.scoring_mode)
    scores = score_batch(model, samples, args.threads)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    outliers = 0
    for i, s in enumerate(scores):
        value = s.decision_value(mode)
        decision = decide(value, threshold) if threshold is not None else ""
        outliers += decision == OUTLIER
        writer.writerow([i, repr(s.log_p_par), repr(s.log_p_perp), repr(s.log_p_x), repr(value), decision])
    atomic_write_text(args.out, buf.getvalue())
    log.info("Scored %d samples (%d outliers) into %s", len(scores), outliers, args.out)
    return 0


def cmd_eval(args) -> int:
    config = _run_config(args)
    corpus = load_corpus(args.data)
    report = run_protocol(corpus, args.inlier_class, config, args.threads)
    atomic_write_text(args.out, report.to_json())
    for row in report.summary():
        log.info(
            "mode=%-18s ratio=%.2f F1=%.4f±%.4f AUROC=%.4f",
            row["mode"], row["ratio"], row["f1_mean"], row["f1_std"], row["auroc_mean"],
        )
    if args.db:
        run_id = ResultsDatabase(args.db).record_report(report, config)
        log.info("Recorded run %d in %s", run_id, args.db)
    return 0


def cmd_fetch(args) -> int:
    for path in fetch_dataset(args.name, args.out):
        print(path)
    return 0


# ─── Parser ───────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpnd", description="Generative probabilistic novelty detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, inlier_class=False, run_config=True):
        if run_config:
            p.add_argument("--config", help="key=value run configuration file")
            p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap for scoring and folds")
        if data:
            p.add_argument("--data", required=True, help=".gpds file or directory of IDX files")
        if inlier_class:
            p.add_argument("--class", dest="inlier_class", type=int, required=True, help="inlier label")

    p = sub.add_parser("generate", help="write a synthetic manifold dataset")
    common(p, data=False)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="train and calibrate a detector")
    common(p, inlier_class=True)
    p.add_argument("--out", "--model", dest="out", required=True, help="model file to write")
    p.add_argument("--mode", choices=SCORING_MODES, help="scoring mode stored in the model")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("score", help="score samples with a saved model")
    common(p, run_config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--mode", choices=SCORING_MODES, help="scoring mode (defaults to the model's)")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("eval", help="run the cross-validated evaluation protocol")
    common(p, inlier_class=True)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--mode", choices=SCORING_MODES, help="scoring mode when ablation is off")
    p.add_argument("--db", help="also append the report to this SQLite file")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("fetch", help="download MNIST or Fashion-MNIST")
    p.add_argument("name", choices=sorted(DATASET_URLS))
    p.add_argument("--out", help="cache directory (defaults to GPND_DATA_DIR)")
    p.set_defaults(handler=cmd_fetch)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be >= 1")
        return args.handler(args)
    except GpndError as exc:
        log.error("%s", exc)
        return exc.exit_code
