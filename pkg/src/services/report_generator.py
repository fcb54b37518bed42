"""Report generation for a run directory: epoch log, metrics and tidy CSV plot data."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.models.kg import AlignmentDataset
from src.models.results import EmbeddingSet, EpochRecord, MetricsReport

logger = logging.getLogger(__name__)

EPOCH_LOG_FILE = "epochs.jsonl"
LOSS_CURVE_FILE = "loss_curve.csv"
METRICS_CSV_FILE = "metrics.csv"
METRICS_JSON_FILE = "metrics.json"
META_WEIGHTS_FILE = "meta_weights.csv"
META_SUMMARY_FILE = "meta_weight_summary.csv"

LOSS_SERIES = ("loss", "loss_mu", "loss_icl", "loss_licl", "loss_xi", "lr", "num_train_pairs")


class ReportGenerator:
    """Write the artifacts of one run into ``output_dir``."""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def append_epoch(self, record: EpochRecord) -> None:
        """Append one line-delimited JSON record to the epoch log."""
        with open(self.output_dir / EPOCH_LOG_FILE, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def write_loss_curve(self, history: List[EpochRecord]) -> str:
        """Tidy loss curve: one (epoch, phase, series, value) row per observation."""
        rows = []
        for record in history:
            values = record.to_dict()
            for series in LOSS_SERIES:
                rows.append({"epoch": record.epoch, "phase": record.phase, "series": series,
                             "value": values[series]})
            for metric, value in record.metrics.items():
                rows.append({"epoch": record.epoch, "phase": record.phase, "series": metric, "value": value})

        output_file = self.output_dir / LOSS_CURVE_FILE
        try:
            pd.DataFrame(rows, columns=["epoch", "phase", "series", "value"]).to_csv(output_file, index=False)
        except Exception as e:
            logger.error(f"Error writing loss curve: {e}")
            raise
        logger.info(f"Generated loss curve: {output_file}")
        return str(output_file)

    def write_metrics(self, report: MetricsReport, extra: Optional[Dict[str, Any]] = None,
                      prefix: str = "") -> str:
        """metrics.csv (direction, metric, value) plus metrics.json with any run summary."""
        csv_file = self.output_dir / f"{prefix}{METRICS_CSV_FILE}"
        json_file = self.output_dir / f"{prefix}{METRICS_JSON_FILE}"
        try:
            pd.DataFrame(report.rows(), columns=["direction", "metric", "value"]).to_csv(csv_file, index=False)
            payload: Dict[str, Any] = {"metrics": report.to_dict()}
            if extra:
                payload.update(extra)
            json_file.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except Exception as e:
            logger.error(f"Error writing metrics: {e}")
            raise
        logger.info(f"Generated metrics report: {csv_file}, {json_file}")
        return str(csv_file)

    @staticmethod
    def format_metrics_table(report: MetricsReport) -> str:
        """Human-readable table: one row per direction, one column per metric."""
        table = pd.DataFrame(report.to_dict()).T
        return table.to_string(float_format=lambda v: f"{v:.4f}")

    def write_meta_weights(self, embeddings: EmbeddingSet, dataset: AlignmentDataset) -> pd.DataFrame:
        """Per-entity meta modality weights (tidy) and their distribution summary.

        Returns the summary frame: mean weight per modality and how many entities
        put their largest weight on it.
        """
        weights = np.atleast_2d(embeddings.weights.data)
        modalities = list(embeddings.modalities)
        entity_ids = np.asarray(dataset.global_ids)
        kg = np.where(np.arange(dataset.num_entities) < dataset.n1, 1, 2)

        frame = pd.DataFrame({
            "row": np.repeat(np.arange(dataset.num_entities), len(modalities)),
            "entity": np.repeat(entity_ids, len(modalities)),
            "kg": np.repeat(kg, len(modalities)),
            "modality": np.tile(modalities, dataset.num_entities),
            "weight": weights.reshape(-1),
        })
        summary = weight_summary(weights, modalities)

        try:
            frame.to_csv(self.output_dir / META_WEIGHTS_FILE, index=False)
            summary.to_csv(self.output_dir / META_SUMMARY_FILE, index=False)
        except Exception as e:
            logger.error(f"Error writing meta weights: {e}")
            raise
        logger.info(f"Generated meta-weight table for {dataset.num_entities} entities: "
                    f"{self.output_dir / META_WEIGHTS_FILE}")
        return summary


def weight_summary(weights: np.ndarray, modalities: List[str]) -> pd.DataFrame:
    weights = np.atleast_2d(weights)
    preferred = np.argmax(weights, axis=1)
    counts = np.bincount(preferred, minlength=len(modalities))
    return pd.DataFrame({
        "modality": modalities,
        "mean_weight": weights.mean(axis=0),
        "std_weight": weights.std(axis=0),
        "argmax_count": counts,
        "argmax_fraction": counts / max(1, weights.shape[0]),
    })
