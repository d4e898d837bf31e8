import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple

import numpy as np

from glpn.baselines import LpConfig, classic_lp, fcn_lp, label_free_gcn_prediction
from glpn.config import Mode, RunConfig
from glpn.dataset import load_dataset
from glpn.evaluation import AggregateReport, RunReport, aggregate, confusion, metrics
from glpn.gcn import GcnModel, TrainConfig, predict, save_checkpoint, train
from glpn.graph import build_graph, load_graph, normalize
from glpn.labeler import (
    VerdictQuality,
    fetch_verdicts,
    filter_top_fraction,
    load_pseudo_labels,
    oracle_verdicts,
    replay_fixtures,
    verdict_quality,
)
from glpn.labels import build_labels
from glpn.models import (
    FAKE,
    CrossModalGraph,
    Dataset,
    IntArray,
    JsObject,
    NormalizedAdjacency,
    PseudoLabelSet,
    VerdictSource,
)
from glpn.prompts import template_for

log = logging.getLogger(__name__)


@dataclass
class PseudoLabelSummary:
    source: VerdictSource
    obtained: int
    kept: int
    # scored against held-out labels for diagnostics only
    quality_kept: VerdictQuality


@dataclass
class ExperimentReport:
    config: JsObject
    mode: Mode
    runs: List[RunReport]
    aggregate: AggregateReport
    pseudo: Optional[PseudoLabelSummary] = None

    def to_dataframe(self) -> Any:
        try:
            import pandas as pd
        except ImportError:
            raise ImportError("Python package glpn-llm[extras] is not installed")
        columns = ("accuracy", "macro_precision", "macro_recall", "macro_f1")
        rows = [{"seed": r.seed, **{k: getattr(r.metrics, k) for k in columns}} for r in self.runs]
        return pd.DataFrame(rows)


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        rho=cfg.rho,
        hidden=cfg.hidden,
        seed=seed,
        runs=cfg.runs,
    )


def prepare(
    cfg: RunConfig, ds: Optional[Dataset] = None, graph: Optional[CrossModalGraph] = None
) -> Tuple[Dataset, CrossModalGraph]:
    """Load the dataset and obtain the graph, from the cache file when one is configured."""
    if ds is None:
        assert cfg.dataset is not None
        ds = load_dataset(cfg.dataset)
    if graph is None:
        if cfg.graph is not None:
            graph = load_graph(cfg.graph)
            if graph.n != ds.n:
                raise ValueError(f"graph {cfg.graph} covers {graph.n} nodes, the dataset has {ds.n}")
        else:
            graph = build_graph(ds, cfg.theta, workers=1 if cfg.deterministic else cfg.threads)
    return ds, graph


def acquire_pseudo_labels(cfg: RunConfig, ds: Dataset) -> PseudoLabelSet:
    """All verdicts of the configured source, before confidence filtering."""
    if cfg.pseudo_source == VerdictSource.Oracle:
        ps = oracle_verdicts(ds, cfg.oracle_accuracy, cfg.oracle_sharpness, cfg.seed)
    elif cfg.pseudo_source == VerdictSource.Fixture:
        assert cfg.fixtures is not None
        ps = replay_fixtures(ds, cfg.fixtures)
    elif cfg.pseudo_source == VerdictSource.File:
        assert cfg.pseudo_labels is not None
        ps = load_pseudo_labels(cfg.pseudo_labels)
    else:
        ps = fetch_verdicts(ds, template_for(cfg.template), cfg.endpoint, cache_path=cfg.fixtures)
    log.info(f"Obtained {len(ps)} pseudo labels from source {ps.source.value}")
    return ps


def _llm_classes(ds: Dataset, ps: PseudoLabelSet) -> IntArray:
    # records without a verdict fall back to class 0
    classes = np.full(ds.n, FAKE, dtype=np.int64)
    for rid, verdict in ps.verdicts.items():
        classes[ds.index[rid]] = verdict.pred
    return classes


def _predict_classes(
    cfg: RunConfig,
    ds: Dataset,
    a_hat: NormalizedAdjacency,
    seed: int,
    pseudo_all: Optional[PseudoLabelSet],
    pseudo_kept: Optional[PseudoLabelSet],
) -> Tuple[IntArray, Optional[GcnModel]]:
    tc = train_config(cfg, seed)
    lp = LpConfig(iterations=cfg.lp_iterations, clamp=cfg.lp_clamp)
    mode = cfg.mode
    if mode == Mode.llm:
        assert pseudo_all is not None
        return _llm_classes(ds, pseudo_all), None
    if mode == Mode.lp:
        return classic_lp(a_hat, build_labels(ds), lp).classes, None
    if mode in (Mode.fcn, Mode.fcn_lp, Mode.fcn_lp_llm):
        prediction = label_free_gcn_prediction(ds, a_hat, tc)
        if mode == Mode.fcn:
            return prediction.classes, None
        seeds = build_labels(ds, pseudo_kept if mode == Mode.fcn_lp_llm else None)
        return fcn_lp(a_hat, seeds, prediction.probs, lp).classes, None
    labels = build_labels(ds, pseudo_kept if mode == Mode.glpn_llm else None)
    model, reports = train(ds, a_hat, labels, tc)
    last = reports[-1]
    log.debug(f"Seed {seed}: final loss {last.loss} over {last.loss_set_size} nodes")
    return predict(ds, a_hat, labels, model).classes, model


def run_experiment(
    cfg: RunConfig,
    ds: Optional[Dataset] = None,
    graph: Optional[CrossModalGraph] = None,
    pseudo: Optional[PseudoLabelSet] = None,
    checkpoint_path: Optional[str] = None,
) -> ExperimentReport:
    """
    Evaluate the configured mode `cfg.runs` times with seeds cfg.seed, cfg.seed + 1, ... on the test split.

    Pseudo labels are obtained once and shared by all runs; `pseudo` holds the unfiltered set when the
    caller already has it. With `checkpoint_path` the GCN of the first run is saved there.
    """
    cfg.validate()
    data, full_graph = prepare(cfg, ds, graph)
    a_hat = normalize(full_graph)
    summary: Optional[PseudoLabelSummary] = None
    kept: Optional[PseudoLabelSet] = None
    if cfg.mode.uses_pseudo_labels:
        if pseudo is None:
            pseudo = acquire_pseudo_labels(cfg, data)
        kept = filter_top_fraction(pseudo, cfg.pseudo_fraction, data.n_test)
        summary = PseudoLabelSummary(
            source=pseudo.source, obtained=len(pseudo), kept=len(kept), quality_kept=verdict_quality(kept, data)
        )
        log.info(f"Kept {len(kept)} of {len(pseudo)} pseudo labels (fraction {cfg.pseudo_fraction})")

    seeds = [cfg.seed + r for r in range(cfg.runs)]

    def one_run(seed: int) -> RunReport:
        classes, model = _predict_classes(cfg, data, a_hat, seed, pseudo, kept)
        if checkpoint_path is not None and model is not None and seed == cfg.seed:
            save_checkpoint(model, train_config(cfg, seed), checkpoint_path)
            log.info(f"Saved the model of seed {seed} to {checkpoint_path}")
        cm = confusion(classes, data.truth, data.test_indices)
        m = metrics(cm)
        log.info(f"{cfg.mode.value} seed {seed}: accuracy {m.accuracy:.4f}, macro F1 {m.macro_f1:.4f}")
        return RunReport(seed=seed, metrics=m, confusion=cm)

    workers = 1 if cfg.deterministic else cfg.threads
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one_run, seeds))
    else:
        runs = [one_run(seed) for seed in seeds]
    return ExperimentReport(
        config=cfg.to_json(),
        mode=cfg.mode,
        runs=runs,
        aggregate=aggregate([r.metrics for r in runs]),
        pseudo=summary,
    )
