import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from glpn.evaluation import MetricsReport, confusion, metrics
from glpn.gcn import LossScope, Prediction, TrainConfig, predict, train
from glpn.labels import build_labels
from glpn.models import (
    BoolArray,
    Dataset,
    FloatArray,
    GlpnError,
    IntArray,
    LabelAssignment,
    NormalizedAdjacency,
)

log = logging.getLogger(__name__)


class NoLabeledNodesError(GlpnError):
    pass


@dataclass(frozen=True)
class LpConfig:
    iterations: int = 10
    clamp: bool = True


@dataclass(frozen=True, eq=False)
class LpResult:
    scores: FloatArray
    classes: IntArray
    # False for nodes no label mass ever reached; their class comes from the tie rule
    reached: BoolArray


def _propagate(a_hat: NormalizedAdjacency, f0: FloatArray, seeds: BoolArray, clamp_to: FloatArray, cfg: LpConfig) -> LpResult:
    if cfg.iterations < 1:
        raise ValueError("iterations must be >= 1")
    f = f0.copy()
    for _ in range(cfg.iterations):
        f = a_hat @ f
        if cfg.clamp:
            f[seeds] = clamp_to[seeds]
    reached = f.sum(axis=1) > 0.0
    unreached = int(np.count_nonzero(~reached))
    if unreached:
        log.warning(f"Label propagation did not reach {unreached} nodes; they fall back to class 0")
    return LpResult(scores=f, classes=np.argmax(f, axis=1).astype(np.int64), reached=reached)


def classic_lp(a_hat: NormalizedAdjacency, labels: LabelAssignment, cfg: LpConfig = LpConfig()) -> LpResult:
    """
    F ← Â F for K iterations, starting from the label matrix; labeled rows are re-fixed after every step
    when clamping. Each iteration costs O(M) for M edges.
    """
    seeds = labels.vectors.sum(axis=1) > 0.0
    if not np.any(seeds):
        raise NoLabeledNodesError("label propagation needs at least one labeled node")
    return _propagate(a_hat, labels.vectors, seeds, labels.vectors, cfg)


def fcn_lp(
    a_hat: NormalizedAdjacency, labels: LabelAssignment, gcn_probs: FloatArray, cfg: LpConfig = LpConfig()
) -> LpResult:
    """
    Label propagation seeded by a label-free GCN: unlabeled rows start from the GCN's class probabilities,
    labeled rows from their one-hot vectors and stay clamped to them.
    """
    seeds = labels.vectors.sum(axis=1) > 0.0
    if not np.any(seeds):
        raise NoLabeledNodesError("label propagation needs at least one labeled node")
    f0 = np.where(seeds[:, None], labels.vectors, gcn_probs)
    return _propagate(a_hat, f0, seeds, labels.vectors, cfg)


def label_free_config(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, loss_scope=LossScope.all_labeled, use_label_features=False)


def label_free_gcn_prediction(
    ds: Dataset, a_hat: NormalizedAdjacency, cfg: TrainConfig, labels: Optional[LabelAssignment] = None
) -> Prediction:
    """
    Train with an all-zero label block and the loss over every train node, then predict.
    The label block keeps its width so the input shape matches the labeled variants.
    """
    if labels is None:
        labels = build_labels(ds)
    free = label_free_config(cfg)
    model, _ = train(ds, a_hat, labels, free)
    return predict(ds, a_hat, labels, model, use_label_features=False)


def label_free_gcn(ds: Dataset, a_hat: NormalizedAdjacency, cfg: TrainConfig) -> MetricsReport:
    prediction = label_free_gcn_prediction(ds, a_hat, cfg)
    return metrics(confusion(prediction.classes, ds.truth, ds.test_indices))
