"""
Evaluation report

Builds the metric table for one prediction file against the gold trees,
renders it as text, and writes the plot-ready CSVs:
- report.csv            one row per system (model run or baseline)
- label_recall.csv      per-label recall, long format
- recall_by_length.csv  recall per constituent width, long format
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from vcpcfg.data.trees import BracketedTree
from vcpcfg.evaluation.metrics import (SpanSet, corpus_f1, label_recalls, recall_by_length,
                                       sentence_level_f1, spans_from_tree)
from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)

DECIMALS = 3


@dataclass
class EvalReport:
    name: str
    corpus_f1: Fraction
    sentence_f1: Fraction
    label_recall: Dict[str, Optional[Fraction]] = field(default_factory=dict)
    recall_by_length: Dict[int, Fraction] = field(default_factory=dict)
    sentences: int = 0
    predicted_spans: int = 0
    gold_spans: int = 0

    def row(self) -> Dict[str, object]:
        out: Dict[str, object] = {"system": self.name, "C-F1": float(self.corpus_f1),
                                  "S-F1": float(self.sentence_f1)}
        for label, value in self.label_recall.items():
            out[label] = None if value is None else float(value)
        out.update(sentences=self.sentences, predicted_spans=self.predicted_spans, gold_spans=self.gold_spans)
        return out


def build_report(name: str, preds: Sequence[SpanSet], golds: Sequence[BracketedTree],
                 labels: Sequence[str]) -> EvalReport:
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predicted trees for {len(golds)} gold trees")
    gold_sets = [spans_from_tree(g) for g in golds]
    return EvalReport(
        name=name,
        corpus_f1=corpus_f1(preds, gold_sets),
        sentence_f1=sentence_level_f1(preds, gold_sets),
        label_recall=dict(label_recalls(preds, golds, labels)),
        recall_by_length=recall_by_length(preds, gold_sets),
        sentences=len(preds),
        predicted_spans=sum(len(p) for p in preds),
        gold_spans=sum(len(g) for g in gold_sets),
    )


# ─────────────────── Tables ───────────────────────────────────────────────

def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports]).set_index("system")


def label_recall_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = [{"system": r.name, "label": label, "recall": float(v)}
            for r in reports for label, v in r.label_recall.items() if v is not None]
    return pd.DataFrame(rows, columns=["system", "label", "recall"])


def recall_by_length_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = [{"system": r.name, "length": width, "recall": float(v)}
            for r in reports for width, v in r.recall_by_length.items()]
    return pd.DataFrame(rows, columns=["system", "length", "recall"])


def render(reports: Sequence[EvalReport], self_f1_value: Optional[Fraction] = None) -> str:
    frame = reports_frame(reports)
    text = frame.to_string(float_format=lambda x: f"{x:.{DECIMALS}f}", na_rep="-")
    if self_f1_value is not None:
        text += f"\n\nself-F1: {float(self_f1_value):.{DECIMALS}f}"
    return text


def write_csvs(reports: Sequence[EvalReport], output_dir: Path) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = [output_dir / "report.csv", output_dir / "label_recall.csv", output_dir / "recall_by_length.csv"]
    reports_frame(reports).to_csv(paths[0], float_format=f"%.{DECIMALS}f")
    label_recall_frame(reports).to_csv(paths[1], index=False, float_format=f"%.{DECIMALS}f")
    recall_by_length_frame(reports).to_csv(paths[2], index=False, float_format=f"%.{DECIMALS}f")
    logger.info("[EVAL] wrote %s", ", ".join(str(p) for p in paths))
    return paths


# ─────────────────── Multi-run summaries ──────────────────────────────────

def summarize_runs(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Mean and unbiased standard deviation of every numeric column across runs."""
    frame = reports_frame(reports).drop(columns=["sentences", "predicted_spans", "gold_spans"])
    frame = frame.apply(pd.to_numeric, errors="coerce")
    summary = pd.DataFrame({"mean": frame.mean(axis=0),
                            "std": frame.std(axis=0, ddof=1) if len(frame) > 1 else np.nan})
    return summary
