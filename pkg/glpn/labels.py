import logging
import math
from typing import List, Optional

import numpy as np

from glpn.json_utils import PathLike, write_jsonl
from glpn.models import (
    NUM_CLASSES,
    Dataset,
    FloatArray,
    GlpnError,
    JsValue,
    LabelAssignment,
    MaskPlan,
    Provenance,
    PseudoLabelSet,
    Split,
)

log = logging.getLogger(__name__)

DEFAULT_RHO = 0.5


class LabelConflictError(GlpnError):
    def __init__(self, record_id: str, reason: str) -> None:
        super().__init__(f"pseudo label for {record_id!r}: {reason}")
        self.record_id = record_id


class ShapeMismatchError(GlpnError):
    pass


def build_labels(ds: Dataset, pseudo: Optional[PseudoLabelSet] = None) -> LabelAssignment:
    """
    One-hot ground truth for train nodes, one-hot pseudo labels for filtered test nodes, zero rows otherwise.
    Held-out test labels are never read.
    """
    vectors = np.zeros((ds.n, NUM_CLASSES), dtype=np.float64)
    provenance: List[Provenance] = [Provenance.Absent] * ds.n
    for i, record in enumerate(ds.records):
        if record.split == Split.train:
            assert record.label is not None
            vectors[i, record.label] = 1.0
            provenance[i] = Provenance.Truth
    verdicts = pseudo.verdicts if pseudo is not None else {}
    for rid, verdict in verdicts.items():
        i = ds.index.get(rid)
        if i is None:
            raise LabelConflictError(rid, "no such record")
        if provenance[i] == Provenance.Truth:
            raise LabelConflictError(rid, "record is truly labeled")
        vectors[i, verdict.pred] = 1.0
        provenance[i] = Provenance.Pseudo
    log.debug(f"Label assignment: {ds.n_train} truth rows, {len(verdicts)} pseudo rows")
    return LabelAssignment(vectors=vectors, provenance=tuple(provenance))


def mask_seed(seed: int, epoch: int) -> int:
    """Seed of the mask drawn in `epoch` of a run seeded with `seed`."""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


def mask_size(n: int, rho: float) -> int:
    return min(n, math.floor(rho * n + 1e-9))


def draw_mask(n: int, rho: float = DEFAULT_RHO, epoch_seed: int = 0) -> MaskPlan:
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    rng = np.random.default_rng(epoch_seed)
    masked = np.sort(rng.choice(n, size=mask_size(n, rho), replace=False)).astype(np.int64)
    m = np.ones(n, dtype=np.float64)
    m[masked] = 0.0
    return MaskPlan(epoch_seed=epoch_seed, rho=rho, masked=masked, m=m)


def apply_mask(labels: LabelAssignment, plan: MaskPlan) -> FloatArray:
    """y' = ỹ scaled row-wise by m; returns a new matrix."""
    if plan.m.shape[0] != labels.n:
        raise ShapeMismatchError(f"mask covers {plan.m.shape[0]} nodes, labels cover {labels.n}")
    return labels.vectors * plan.m[:, None]


def assemble_features(ds: Dataset, y_prime: FloatArray) -> FloatArray:
    """x'_i = t_i ⊕ v_i ⊕ y'_i."""
    if y_prime.ndim != 2 or y_prime.shape[0] != ds.n:
        raise ShapeMismatchError(f"label block has shape {y_prime.shape}, dataset has {ds.n} nodes")
    return np.hstack([ds.features, y_prime])


def dump_labels(labels: LabelAssignment, ds: Dataset, path: PathLike) -> None:
    rows: List[JsValue] = [
        {"id": rid, "vector": [float(x) for x in labels.vectors[i]], "provenance": labels.provenance[i].value}
        for i, rid in enumerate(ds.ids)
    ]
    write_jsonl(path, rows)
