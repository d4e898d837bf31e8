import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from glpn.models import FAKE, REAL, Dataset, GlpnError, IntArray, CrossModalGraph, PseudoLabelSet

if TYPE_CHECKING:
    from glpn.config import RunConfig
    from glpn.pipeline import ExperimentReport

log = logging.getLogger(__name__)

CLASSES = [FAKE, REAL]


class EvaluationError(GlpnError):
    pass


class SweepError(GlpnError):
    def __init__(self, parameter: str, value: float, cause: Exception) -> None:
        super().__init__(f"sweep over {parameter} failed at {value}: {cause}")
        self.parameter = parameter
        self.value = value


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with class 0 (fake) as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    # indexed by class: 0 fake, 1 real
    precision: List[float]
    recall: List[float]
    f1: List[float]


def confusion(preds: IntArray, truths: IntArray, eval_ids: IntArray) -> ConfusionMatrix:
    """
    Count predictions against held-out labels over the evaluated nodes only.
    `truths` holds -1 where a label is missing.
    """
    if eval_ids.size == 0:
        raise EvaluationError("nothing to evaluate: the evaluation set is empty")
    p = preds[eval_ids]
    t = truths[eval_ids]
    if np.any(t < 0):
        missing = int(eval_ids[np.flatnonzero(t < 0)[0]])
        raise EvaluationError(f"node {missing} has no held-out label")
    # rows are truths, columns predictions, both in CLASSES order
    counts = confusion_matrix(t, p, labels=CLASSES)
    return ConfusionMatrix(
        tp=int(counts[FAKE, FAKE]),
        fp=int(counts[REAL, FAKE]),
        fn=int(counts[FAKE, REAL]),
        tn=int(counts[REAL, REAL]),
    )


def _label_pairs(cm: ConfusionMatrix) -> Tuple[IntArray, IntArray]:
    counts = [cm.tp, cm.fp, cm.fn, cm.tn]
    truths = np.repeat(np.array([FAKE, REAL, FAKE, REAL], dtype=np.int64), counts)
    preds = np.repeat(np.array([FAKE, FAKE, REAL, REAL], dtype=np.int64), counts)
    return truths, preds


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus per-class and macro scores; a ratio with a zero denominator counts as 0."""
    if cm.total == 0:
        raise EvaluationError("confusion matrix is empty")
    truths, preds = _label_pairs(cm)
    precision, recall, f1, _ = precision_recall_fscore_support(truths, preds, labels=CLASSES, zero_division=0)
    return MetricsReport(
        accuracy=float(accuracy_score(truths, preds)),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        precision=[float(x) for x in precision],
        recall=[float(x) for x in recall],
        f1=[float(x) for x in f1],
    )


@dataclass(frozen=True)
class AggregateReport:
    runs: int
    mean: MetricsReport
    std: MetricsReport


@dataclass
class RunReport:
    seed: int
    metrics: MetricsReport
    confusion: ConfusionMatrix


def aggregate(reports: Sequence[MetricsReport]) -> AggregateReport:
    """Mean and sample standard deviation (n - 1 denominator, 0 for a single report) per metric."""
    if not reports:
        raise EvaluationError("no reports to aggregate")
    ddof = 1 if len(reports) > 1 else 0

    def reduce(op: Callable[[Any], Any]) -> MetricsReport:
        values = {}
        for f in fields(MetricsReport):
            column = np.array([getattr(r, f.name) for r in reports], dtype=np.float64)
            reduced = op(column)
            values[f.name] = [float(x) for x in reduced] if column.ndim == 2 else float(reduced)
        return MetricsReport(**values)

    return AggregateReport(
        runs=len(reports),
        mean=reduce(lambda c: np.mean(c, axis=0)),
        std=reduce(lambda c: np.std(c, axis=0, ddof=ddof)),
    )


class SweepParameter(Enum):
    mask_rate = "mask_rate"
    pseudo_fraction = "pseudo_fraction"


MASK_RATE_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
PSEUDO_FRACTION_GRID = [0.01, 0.05, 0.10, 0.50, 0.90]


@dataclass
class SweepEntry:
    value: float
    runs: List[RunReport]
    aggregate: AggregateReport


@dataclass
class SweepResult:
    parameter: SweepParameter
    grid: List[float]
    entries: List[SweepEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dataframe(self) -> Any:
        try:
            import pandas as pd
        except ImportError:
            raise ImportError("Python package glpn-llm[extras] is not installed")
        rows = []
        for entry in self.entries:
            row = {self.parameter.value: entry.value, "runs": entry.aggregate.runs}
            for name in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
                row[f"{name}_mean"] = getattr(entry.aggregate.mean, name)
                row[f"{name}_std"] = getattr(entry.aggregate.std, name)
            rows.append(row)
        return pd.DataFrame(rows)


def _with_value(cfg: "RunConfig", parameter: SweepParameter, value: float) -> "RunConfig":
    if parameter == SweepParameter.mask_rate:
        return replace(cfg, rho=value)
    return replace(cfg, pseudo_fraction=value)


def sweep(
    parameter: SweepParameter,
    grid: Sequence[float],
    base: "RunConfig",
    ds: Optional[Dataset] = None,
    graph: Optional[CrossModalGraph] = None,
    pseudo: Optional[PseudoLabelSet] = None,
) -> SweepResult:
    """
    Run the full pipeline `base.runs` times per grid value and aggregate each grid point.

    Grid points run on `base.threads` workers unless the config asks for determinism; results are
    merged by grid index. Dataset, graph and pseudo labels are shared across grid points.
    """
    # the pipeline module imports this one
    from glpn.pipeline import acquire_pseudo_labels, prepare, run_experiment

    if not grid:
        raise EvaluationError("sweep grid is empty")
    for value in grid:
        if not 0.0 <= value <= 1.0:
            raise EvaluationError(f"{parameter.value} value {value} is outside [0, 1]")
    base.validate()
    ds, graph = prepare(base, ds, graph)
    if pseudo is None and base.mode.uses_pseudo_labels:
        pseudo = acquire_pseudo_labels(base, ds)
    workers = 1 if base.deterministic else base.threads
    inner = replace(base, threads=1) if workers > 1 else base

    def run_point(value: float) -> "ExperimentReport":
        try:
            return run_experiment(_with_value(inner, parameter, value), ds, graph, pseudo)
        except GlpnError as e:
            raise SweepError(parameter.value, value, e) from e

    if workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_point, grid))
    else:
        reports = [run_point(value) for value in grid]
    entries = [SweepEntry(value=float(v), runs=r.runs, aggregate=r.aggregate) for v, r in zip(grid, reports)]
    for entry in entries:
        log.info(
            f"{parameter.value}={entry.value}: accuracy {entry.aggregate.mean.accuracy:.4f} "
            f"± {entry.aggregate.std.accuracy:.4f}"
        )
    return SweepResult(parameter=parameter, grid=[float(v) for v in grid], entries=entries)
