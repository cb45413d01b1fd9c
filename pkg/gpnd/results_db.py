"""
GPND — Results Database
SQLite-backed history of evaluation runs and their per-fold metrics.
"""

import json
import sqlite3
from dataclasses import asdict
from datetime import datetime

from gpnd.config import RunConfig
from gpnd.protocol import ProtocolReport, SUMMARY_METRICS


class ResultsDatabase:
    """Appends protocol reports to SQLite for later comparison."""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._init_db()

    # ── Setup ──────────────────────────────────────────────────────────────

    def _init_db(self) -> None:
        with self._conn() as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS runs (
                    id            INTEGER PRIMARY KEY AUTOINCREMENT,
                    created_at    TEXT NOT NULL,
                    inlier_class  INTEGER NOT NULL,
                    seed          INTEGER NOT NULL,
                    config_json   TEXT NOT NULL DEFAULT '{}'
                )
                """
            )
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS metrics (
                    run_id           INTEGER NOT NULL REFERENCES runs(id),
                    fold             INTEGER NOT NULL,
                    ratio            REAL NOT NULL,
                    mode             TEXT NOT NULL,
                    f1               REAL NOT NULL,
                    auroc            REAL NOT NULL,
                    fpr_at_95tpr     REAL NOT NULL,
                    detection_error  REAL NOT NULL,
                    aupr_in          REAL NOT NULL,
                    aupr_out         REAL NOT NULL,
                    threshold        REAL,
                    PRIMARY KEY (run_id, fold, ratio, mode)
                )
                """
            )

    def _conn(self) -> sqlite3.Connection:
        return sqlite3.connect(self.db_path)

    # ── Public API ─────────────────────────────────────────────────────────

    def record_report(self, report: ProtocolReport, config: RunConfig | None = None) -> int:
        """Store one protocol report; returns the new run id."""
        config_json = json.dumps(_config_dict(config), sort_keys=True, ensure_ascii=True)
        with self._conn() as conn:
            cursor = conn.execute(
                "INSERT INTO runs (created_at, inlier_class, seed, config_json) VALUES (?, ?, ?, ?)",
                (datetime.now().isoformat(), report.inlier_class, report.seed, config_json),
            )
            run_id = int(cursor.lastrowid)
            conn.executemany(
                """
                INSERT INTO metrics (
                    run_id, fold, ratio, mode, f1, auroc, fpr_at_95tpr,
                    detection_error, aupr_in, aupr_out, threshold
                )
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                [
                    (
                        run_id, e.fold, e.ratio, e.mode, e.f1, e.auroc, e.fpr_at_95tpr,
                        e.detection_error, e.aupr_in, e.aupr_out, _finite_or_none(e.threshold),
                    )
                    for e in report.entries
                ],
            )
        return run_id

    def get_runs(self, limit: int = 20) -> list[dict]:
        """Most recent runs first."""
        with self._conn() as conn:
            conn.row_factory = sqlite3.Row
            rows = conn.execute(
                "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
            ).fetchall()
            return [dict(r) for r in rows]

    def get_metrics(self, run_id: int, mode: str | None = None) -> list[dict]:
        with self._conn() as conn:
            conn.row_factory = sqlite3.Row
            if mode:
                rows = conn.execute(
                    """
                    SELECT * FROM metrics
                    WHERE run_id = ? AND mode = ?
                    ORDER BY fold, ratio
                    """,
                    (run_id, mode),
                ).fetchall()
            else:
                rows = conn.execute(
                    "SELECT * FROM metrics WHERE run_id = ? ORDER BY fold, ratio, mode",
                    (run_id,),
                ).fetchall()
            return [dict(r) for r in rows]

    def get_summary(self, run_id: int) -> list[dict]:
        """Fold-averaged metrics per (mode, ratio)."""
        averages = ", ".join(f"AVG({name}) AS {name}" for name in SUMMARY_METRICS)
        with self._conn() as conn:
            conn.row_factory = sqlite3.Row
            rows = conn.execute(
                f"""
                SELECT mode, ratio, COUNT(*) AS folds, {averages}
                FROM metrics
                WHERE run_id = ?
                GROUP BY mode, ratio
                ORDER BY mode, ratio
                """,
                (run_id,),
            ).fetchall()
            return [dict(r) for r in rows]

    def delete_run(self, run_id: int) -> None:
        with self._conn() as conn:
            conn.execute("DELETE FROM metrics WHERE run_id = ?", (run_id,))
            conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))


def _config_dict(config: RunConfig | None) -> dict:
    return {} if config is None else asdict(config)


def _finite_or_none(value: float) -> float | None:
    return value if value not in (float("inf"), float("-inf")) else None
