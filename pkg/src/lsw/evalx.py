"""Multi-label metrics, result tables and section-weight exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CompatibilityError, NoSectionWeightsError, ShapeError

METRIC_NAMES = ("macro_f1", "macro_precision", "macro_recall", "micro_f1", "micro_precision", "micro_recall")
DEFAULT_THRESHOLD = 0.5
DEFAULT_BIN_WIDTH = 0.05


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r else 0.0


@dataclass
class MetricsReport:
    macro_f1: float
    macro_precision: float
    macro_recall: float
    micro_f1: float
    micro_precision: float
    micro_recall: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    threshold: float
    labels: tuple[str, ...] | None = None

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def compute_metrics(
    probabilities,
    gold,
    threshold: float = DEFAULT_THRESHOLD,
    zero_division: str = "zero",
    labels: Sequence[str] | None = None,
) -> MetricsReport:
    """Micro/macro precision, recall and F1 of thresholded probabilities.

    A label is predicted when its probability is ``>= threshold``. Any 0/0
    ratio counts as 0. With ``zero_division="skip"`` classes with
    TP = FP = FN = 0 are left out of the macro means instead of counting as 0.
    """
    probs = np.asarray(probabilities, dtype=float)
    gold = np.asarray(gold)
    if probs.shape != gold.shape or probs.ndim != 2:
        raise ShapeError(f"probabilities shape {probs.shape} != gold shape {gold.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if zero_division not in ("zero", "skip"):
        raise ValueError(f"zero_division must be 'zero' or 'skip', got {zero_division!r}")
    if labels is not None and len(labels) != probs.shape[1]:
        raise ShapeError(f"{len(labels)} label names for {probs.shape[1]} classes")

    pred = probs >= threshold
    truth = gold.astype(bool)
    tp = (pred & truth).sum(axis=0).astype(np.int64)
    fp = (pred & ~truth).sum(axis=0).astype(np.int64)
    fn = (~pred & truth).sum(axis=0).astype(np.int64)

    micro_p = _ratio(int(tp.sum()), int(tp.sum() + fp.sum()))
    micro_r = _ratio(int(tp.sum()), int(tp.sum() + fn.sum()))

    per_p, per_r, per_f = [], [], []
    for j in range(probs.shape[1]):
        if zero_division == "skip" and tp[j] == fp[j] == fn[j] == 0:
            continue
        p = _ratio(int(tp[j]), int(tp[j] + fp[j]))
        r = _ratio(int(tp[j]), int(tp[j] + fn[j]))
        per_p.append(p)
        per_r.append(r)
        per_f.append(_f1(p, r))
    n = len(per_p)
    return MetricsReport(
        macro_f1=sum(per_f) / n if n else 0.0,
        macro_precision=sum(per_p) / n if n else 0.0,
        macro_recall=sum(per_r) / n if n else 0.0,
        micro_f1=_f1(micro_p, micro_r),
        micro_precision=micro_p,
        micro_recall=micro_r,
        tp=tp,
        fp=fp,
        fn=fn,
        threshold=threshold,
        labels=None if labels is None else tuple(labels),
    )


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------


def write_metrics_csv(path, rows: Mapping[str, MetricsReport | Mapping[str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("method",) + METRIC_NAMES)
        for method, rep in rows.items():
            vals = rep.as_dict() if isinstance(rep, MetricsReport) else rep
            w.writerow([method] + [f"{vals[k]:.4f}" for k in METRIC_NAMES])


def read_metrics_csv(path) -> dict[str, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [k for k in ("method",) + METRIC_NAMES if k not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: metrics CSV lacks columns {missing}")
        return {row["method"]: {k: float(row[k]) for k in METRIC_NAMES} for row in reader}


@dataclass
class RunComparison:
    names: tuple[str, str]
    a: dict[str, float]
    b: dict[str, float]
    deltas: dict[str, float]
    better: dict[str, str | None]

    def format(self) -> str:
        return format_results({self.names[0]: self.a, self.names[1]: self.b}) + "\n" + "delta (a - b): " + ", ".join(
            f"{k}={self.deltas[k]:+.4f}" for k in METRIC_NAMES
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("metric", self.names[0], self.names[1], "delta", "better"))
            for k in METRIC_NAMES:
                w.writerow([k, f"{self.a[k]:.4f}", f"{self.b[k]:.4f}", f"{self.deltas[k]:+.4f}", self.better[k] or "tie"])


def _values(rep) -> dict[str, float]:
    return rep.as_dict() if isinstance(rep, MetricsReport) else {k: float(rep[k]) for k in METRIC_NAMES}


def compare_runs(report_a, report_b, names: tuple[str, str] = ("a", "b")) -> RunComparison:
    """Per-metric ``a - b`` differences and which run is better on each."""
    la = getattr(report_a, "labels", None)
    lb = getattr(report_b, "labels", None)
    if la is not None and lb is not None and tuple(la) != tuple(lb):
        raise CompatibilityError("reports are over different label spaces")
    ta, tb = getattr(report_a, "tp", None), getattr(report_b, "tp", None)
    if ta is not None and tb is not None and len(ta) != len(tb):
        raise CompatibilityError(f"reports have {len(ta)} and {len(tb)} classes")
    a, b = _values(report_a), _values(report_b)
    deltas = {k: a[k] - b[k] for k in METRIC_NAMES}
    better = {k: names[0] if deltas[k] > 0 else names[1] if deltas[k] < 0 else None for k in METRIC_NAMES}
    return RunComparison(tuple(names), a, b, deltas, better)


def format_results(rows: Mapping[str, MetricsReport | Mapping[str, float]]) -> str:
    """Percent table, one row per method; the best value per column gets a ``*``."""
    vals = {m: _values(r) for m, r in rows.items()}
    best = {k: max(v[k] for v in vals.values()) for k in METRIC_NAMES} if vals else {}
    header = ["Method"] + [k.replace("_", " ").title().replace("F1", "F-1") for k in METRIC_NAMES]
    lines = [header]
    for method, v in vals.items():
        lines.append([method] + [f"{100 * v[k]:.1f}%" + ("*" if v[k] == best[k] else "") for k in METRIC_NAMES])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in lines)


# ---------------------------------------------------------------------------
# section weights
# ---------------------------------------------------------------------------


@dataclass
class WeightReport:
    doc_ids: list[str]
    section_names: tuple[str, ...]
    weights: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    bin_edges: np.ndarray
    histogram: np.ndarray  # (K, n_bins)

    def write_csvs(self, out_dir, prefix: str = "weights") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "documents": out_dir / f"{prefix}_per_document.csv",
            "summary": out_dir / f"{prefix}_summary.csv",
            "histogram": out_dir / f"{prefix}_histogram.csv",
        }
        with open(paths["documents"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("id",) + self.section_names)
            for doc_id, row in zip(self.doc_ids, self.weights):
                w.writerow([doc_id] + [repr(float(x)) for x in row])
        with open(paths["summary"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("section", "mean", "std", "n_docs"))
            for k, name in enumerate(self.section_names):
                w.writerow([name, f"{self.mean[k]:.6f}", f"{self.std[k]:.6f}", len(self.doc_ids)])
        with open(paths["histogram"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("section", "bin_low", "bin_high", "count"))
            for k, name in enumerate(self.section_names):
                for b in range(self.histogram.shape[1]):
                    w.writerow([name, f"{self.bin_edges[b]:.4f}", f"{self.bin_edges[b + 1]:.4f}", int(self.histogram[k, b])])
        return paths


def weight_report(
    doc_ids: Sequence[str], section_names: Sequence[str], weights, bin_width: float = DEFAULT_BIN_WIDTH
) -> WeightReport:
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape != (len(doc_ids), len(section_names)):
        raise ShapeError(f"weights shape {weights.shape} does not match {len(doc_ids)} docs x {len(section_names)} sections")
    if not 0.0 < bin_width <= 1.0:
        raise ValueError(f"bin width must be in (0, 1], got {bin_width}")
    n_bins = int(round(1.0 / bin_width))
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bin b holds [edge_b, edge_b+1); 1.0 goes to the last bin
    idx = np.clip(np.floor(weights * n_bins).astype(int), 0, n_bins - 1)
    hist = np.zeros((len(section_names), n_bins), dtype=np.int64)
    for k in range(len(section_names)):
        hist[k] = np.bincount(idx[:, k], minlength=n_bins)
    if len(doc_ids):
        mean, std = weights.mean(axis=0), weights.std(axis=0)
    else:
        mean = std = np.zeros(len(section_names))
    return WeightReport(list(doc_ids), tuple(section_names), weights, mean, std, edges, hist)


def export_weights(
    model,
    records,
    out_dir=None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    doc_ids: Sequence[str] | None = None,
) -> WeightReport:
    """Per-document and corpus-level section weights of an LSW model."""
    if not model.config.has_section_weights:
        raise NoSectionWeightsError()
    if doc_ids is not None:
        wanted = set(doc_ids)
        records = [r for r in records if r.id in wanted]
    weights = model.section_weights_of(records) if records else np.zeros((0, model.config.n_sections))
    report = weight_report([r.id for r in records], model.config.section_names, weights, bin_width)
    if out_dir is not None:
        report.write_csvs(out_dir)
    return report
