import io
import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import log_softmax

from glpn.json_utils import PathLike, json_dump
from glpn.labels import DEFAULT_RHO, apply_mask, assemble_features, draw_mask, mask_seed
from glpn.models import (
    NUM_CLASSES,
    Dataset,
    FloatArray,
    GlpnError,
    IntArray,
    JsObject,
    LabelAssignment,
    MaskPlan,
    NormalizedAdjacency,
)

log = logging.getLogger(__name__)

PARAMETERS = ("w0", "b0", "w1", "b1")

Gradients = Dict[str, FloatArray]
EpochObserver = Callable[[int, MaskPlan, IntArray, FloatArray], None]


class NonFiniteError(GlpnError):
    def __init__(self, stage: str) -> None:
        super().__init__(f"non-finite values in {stage}")
        self.stage = stage


class TrainingDivergedError(GlpnError):
    def __init__(self, epoch: int, reason: str) -> None:
        super().__init__(f"training diverged in epoch {epoch}: {reason}")
        self.epoch = epoch


class CheckpointError(GlpnError):
    pass


class LossScope(Enum):
    # nodes of the epoch's mask that carry a ground-truth label
    masked = "masked"
    # every node that carries a ground-truth label
    all_labeled = "all_labeled"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    rho: float = DEFAULT_RHO
    hidden: int = 512
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    runs: int = 5
    loss_scope: LossScope = LossScope.masked
    use_label_features: bool = True

    def validate(self) -> None:
        if not self.learning_rate > 0 or self.epochs < 1 or self.hidden < 1 or self.runs < 1:
            raise ValueError("learning_rate, epochs, hidden and runs must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.epsilon > 0):
            raise ValueError("Adam betas must be in [0, 1) and epsilon > 0")


@dataclass(eq=False)
class GcnModel:
    w0: FloatArray
    b0: FloatArray
    w1: FloatArray
    b1: FloatArray

    @property
    def d_in(self) -> int:
        return int(self.w0.shape[0])

    @property
    def d_h(self) -> int:
        return int(self.w0.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.w1.shape[1])

    def params(self) -> Dict[str, FloatArray]:
        return {"w0": self.w0, "b0": self.b0, "w1": self.w1, "b1": self.b1}

    def same_as(self, other: "GcnModel") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values()))


@dataclass(eq=False)
class AdamState:
    m: Dict[str, FloatArray]
    v: Dict[str, FloatArray]
    t: int = 0

    @staticmethod
    def zeros_like(model: GcnModel) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in model.params().items()},
            v={k: np.zeros_like(p) for k, p in model.params().items()},
        )


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    # None when the loss set of the epoch is empty and the step was skipped
    loss: Optional[float]
    loss_set_size: int
    held_out_accuracy: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ForwardPass:
    ax: FloatArray
    z1: FloatArray
    h1: FloatArray
    ah: FloatArray
    logits: FloatArray
    log_probs: FloatArray

    @property
    def probs(self) -> FloatArray:
        return np.exp(self.log_probs)


@dataclass(frozen=True, eq=False)
class Prediction:
    classes: IntArray
    probs: FloatArray


def init_model(d_in: int, d_h: int, num_classes: int = NUM_CLASSES, seed: int = 0) -> GcnModel:
    """Glorot-uniform weights, zero biases."""
    if d_in < 1 or d_h < 1 or num_classes < 1:
        raise ValueError("model dimensions must be positive")
    rng = np.random.default_rng(seed)

    def glorot(fan_in: int, fan_out: int) -> FloatArray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return GcnModel(
        w0=glorot(d_in, d_h),
        b0=np.zeros(d_h, dtype=np.float64),
        w1=glorot(d_h, num_classes),
        b1=np.zeros(num_classes, dtype=np.float64),
    )


def _check_finite(stage: str, value: FloatArray) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(stage)


def forward(a_hat: NormalizedAdjacency, x_prime: FloatArray, model: GcnModel) -> ForwardPass:
    """
    H1 = relu(Â X' W0 + b0), logits = Â H1 W1 + b1, log-probabilities by a stable row-wise log-softmax.
    """
    if x_prime.shape != (a_hat.n, model.d_in):
        raise ValueError(f"features of shape {x_prime.shape} do not fit {a_hat.n} nodes and d_in={model.d_in}")
    _check_finite("input features", x_prime)
    ax = a_hat @ x_prime
    z1 = ax @ model.w0 + model.b0
    _check_finite("hidden layer", z1)
    h1 = np.maximum(z1, 0.0)
    ah = a_hat @ h1
    logits = ah @ model.w1 + model.b1
    _check_finite("logits", logits)
    return ForwardPass(ax=ax, z1=z1, h1=h1, ah=ah, logits=logits, log_probs=log_softmax(logits, axis=1))


def loss_set(labels: LabelAssignment, plan: MaskPlan, scope: LossScope = LossScope.masked) -> IntArray:
    if scope == LossScope.all_labeled:
        return np.flatnonzero(labels.truth_mask).astype(np.int64)
    return np.flatnonzero(labels.truth_mask & plan.masked_mask).astype(np.int64)


def cross_entropy(log_probs: FloatArray, targets: IntArray, nodes: IntArray) -> Optional[float]:
    """Mean negative log-likelihood over `nodes`; None for an empty node set."""
    if nodes.size == 0:
        return None
    return float(-np.mean(log_probs[nodes, targets[nodes]]))


def masked_loss(
    log_probs: FloatArray, labels: LabelAssignment, plan: MaskPlan, scope: LossScope = LossScope.masked
) -> Tuple[Optional[float], IntArray]:
    nodes = loss_set(labels, plan, scope)
    return cross_entropy(log_probs, labels.targets, nodes), nodes


def backward(
    a_hat: NormalizedAdjacency, fp: ForwardPass, model: GcnModel, nodes: IntArray, targets: IntArray
) -> Gradients:
    """
    Analytic gradients of the mean cross-entropy over `nodes`.

    Â is symmetric, so it stands in for its own transpose when the error flows back through a layer.
    """
    d_logits = np.zeros_like(fp.logits)
    if nodes.size > 0:
        d_logits[nodes] = fp.probs[nodes]
        d_logits[nodes, targets[nodes]] -= 1.0
        d_logits /= nodes.size
    d_w1 = fp.ah.T @ d_logits
    d_b1 = d_logits.sum(axis=0)
    d_h1 = a_hat @ (d_logits @ model.w1.T)
    d_z1 = d_h1 * (fp.z1 > 0.0)
    d_w0 = fp.ax.T @ d_z1
    d_b0 = d_z1.sum(axis=0)
    return {"w0": d_w0, "b0": d_b0, "w1": d_w1, "b1": d_b1}


def adam_step(
    model: GcnModel,
    grads: Gradients,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> Tuple[GcnModel, AdamState]:
    """Bias-corrected Adam. Returns a new model and state; the inputs are left untouched."""
    t = state.t + 1
    params: Dict[str, FloatArray] = {}
    m: Dict[str, FloatArray] = {}
    v: Dict[str, FloatArray] = {}
    for name, p in model.params().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient of {name} has shape {g.shape}, parameter has {p.shape}")
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m[name] / (1.0 - beta1**t)
        v_hat = v[name] / (1.0 - beta2**t)
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return GcnModel(**params), AdamState(m=m, v=v, t=t)


def _label_block(labels: LabelAssignment, plan: Optional[MaskPlan], use_label_features: bool) -> FloatArray:
    if not use_label_features:
        return np.zeros_like(labels.vectors)
    return labels.vectors.copy() if plan is None else apply_mask(labels, plan)


def _accuracy(classes: IntArray, truth: IntArray, nodes: IntArray) -> Optional[float]:
    if nodes.size == 0:
        return None
    return float(np.mean(classes[nodes] == truth[nodes]))


def train(
    ds: Dataset,
    a_hat: NormalizedAdjacency,
    labels: LabelAssignment,
    cfg: TrainConfig,
    observer: Optional[EpochObserver] = None,
    held_out: Optional[IntArray] = None,
) -> Tuple[GcnModel, List[EpochReport]]:
    """
    Full-batch training under the global random mask.

    Every epoch draws a fresh mask, zeroes the label block of the masked nodes, and takes one Adam step on the
    cross-entropy of the loss set. Epochs with an empty loss set take no step. The observer, when given,
    sees each epoch's mask, loss set and input features. With `held_out` (node indices whose held-out
    labels are known to the caller) each report carries the inference accuracy on those nodes.
    """
    cfg.validate()
    model = init_model(ds.d_t + ds.d_v + labels.num_classes, cfg.hidden, labels.num_classes, cfg.seed)
    state = AdamState.zeros_like(model)
    targets = labels.targets
    reports: List[EpochReport] = []
    for epoch in range(cfg.epochs):
        plan = draw_mask(ds.n, cfg.rho, mask_seed(cfg.seed, epoch))
        x_prime = assemble_features(ds, _label_block(labels, plan, cfg.use_label_features))
        nodes = loss_set(labels, plan, cfg.loss_scope)
        if observer is not None:
            observer(epoch, plan, nodes, x_prime)
        try:
            fp = forward(a_hat, x_prime, model)
        except NonFiniteError as e:
            raise TrainingDivergedError(epoch, str(e)) from e
        loss = cross_entropy(fp.log_probs, targets, nodes)
        if loss is not None:
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, f"loss is {loss}")
            grads = backward(a_hat, fp, model, nodes, targets)
            model, state = adam_step(model, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
        accuracy = None
        if held_out is not None:
            accuracy = _accuracy(predict(ds, a_hat, labels, model, cfg.use_label_features).classes, ds.truth, held_out)
        reports.append(EpochReport(epoch=epoch, loss=loss, loss_set_size=int(nodes.size), held_out_accuracy=accuracy))
        log.debug(f"Epoch {epoch}: loss={loss} over {nodes.size} nodes")
    return model, reports


def predict(
    ds: Dataset,
    a_hat: NormalizedAdjacency,
    labels: LabelAssignment,
    model: GcnModel,
    use_label_features: bool = True,
) -> Prediction:
    """
    One forward pass with the unmasked label block. Ties go to class 0, the first maximum.
    """
    x_prime = assemble_features(ds, _label_block(labels, None, use_label_features))
    probs = forward(a_hat, x_prime, model).probs
    return Prediction(classes=np.argmax(probs, axis=1).astype(np.int64), probs=probs)


def save_checkpoint(model: GcnModel, cfg: TrainConfig, path: PathLike) -> None:
    """
    Store the parameters and the config echo in a numpy archive. The stable file name does not
    have to end in .npz: the archive goes through an open file.
    """
    config: JsObject = json_dump(cfg, TrainConfig)  # type: ignore
    with open(path, "wb") as f:
        np.savez(f, config=np.array(json.dumps(config, sort_keys=True)), **model.params())


def load_checkpoint(path: PathLike) -> Tuple[GcnModel, JsObject]:
    try:
        with open(path, "rb") as f:
            archive = np.load(io.BytesIO(f.read()), allow_pickle=False)
        params = {name: np.asarray(archive[name], dtype=np.float64) for name in PARAMETERS}
        config = json.loads(str(archive["config"]))
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    model = GcnModel(**params)
    if model.w0.ndim != 2 or model.w1.shape[0] != model.d_h or model.b0.shape != (model.d_h,):
        raise CheckpointError(f"checkpoint {path} has inconsistent parameter shapes")
    return model, config


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)

