import numpy as np
from pytest import approx, raises
from sklearn.metrics import f1_score

from glpn.config import Mode, RunConfig
from glpn.dataset import generate_synthetic
from glpn.evaluation import (
    MASK_RATE_GRID,
    PSEUDO_FRACTION_GRID,
    ConfusionMatrix,
    EvaluationError,
    SweepParameter,
    aggregate,
    confusion,
    metrics,
    sweep,
)
from glpn.json_utils import json_dump
from glpn.pipeline import run_experiment
from tests import small_synth


def test_confusion() -> None:
    truths = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1, -1], dtype=np.int64)
    eval_ids = np.arange(10, dtype=np.int64)
    assert confusion(truths.copy(), truths, eval_ids) == ConfusionMatrix(tp=5, fp=0, fn=0, tn=5)
    all_fake = np.zeros(11, dtype=np.int64)
    assert confusion(all_fake, truths, eval_ids) == ConfusionMatrix(tp=5, fp=5, fn=0, tn=0)
    # only the evaluated nodes count
    assert confusion(all_fake, truths, np.array([0, 5])).total == 2
    with raises(EvaluationError):
        confusion(all_fake, truths, np.zeros(0, dtype=np.int64))
    with raises(EvaluationError, match="node 10"):
        confusion(all_fake, truths, np.array([3, 10]))


def test_metrics() -> None:
    m = metrics(ConfusionMatrix(tp=40, fp=10, fn=10, tn=40))
    assert (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1) == (
        approx(0.8),
        approx(0.8),
        approx(0.8),
        approx(0.8),
    )
    perfect = metrics(ConfusionMatrix(tp=3, fp=0, fn=0, tn=7))
    assert perfect.accuracy == perfect.macro_f1 == perfect.macro_precision == perfect.macro_recall == 1.0
    no_fake_predictions = metrics(ConfusionMatrix(tp=0, fp=0, fn=4, tn=6))
    assert no_fake_predictions.precision[0] == 0.0
    assert no_fake_predictions.f1[0] == 0.0
    assert no_fake_predictions.recall == [0.0, 1.0]
    with raises(EvaluationError):
        metrics(ConfusionMatrix(0, 0, 0, 0))


def test_accuracy_equals_micro_f1() -> None:
    rng = np.random.default_rng(0)
    for _ in range(20):
        truths = rng.integers(0, 2, size=30)
        preds = rng.integers(0, 2, size=30)
        cm = confusion(preds, truths, np.arange(30))
        # summed over both classes every error is one false positive and one false negative
        by_hand = 2 * (cm.tp + cm.tn) / (2 * (cm.tp + cm.tn) + 2 * (cm.fp + cm.fn))
        assert metrics(cm).accuracy == approx(by_hand)
        assert metrics(cm).accuracy == approx(f1_score(truths, preds, average="micro"))


def test_metrics_match_sklearn_on_random_predictions() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        truths = rng.integers(0, 2, size=25)
        preds = rng.integers(0, 2, size=25)
        m = metrics(confusion(preds, truths, np.arange(25)))
        assert m.macro_f1 == approx(f1_score(truths, preds, average="macro", zero_division=0))
        assert m.f1 == [approx(x) for x in f1_score(truths, preds, average=None, labels=[0, 1], zero_division=0)]


def test_metrics_ignore_node_order() -> None:
    rng = np.random.default_rng(1)
    truths = rng.integers(0, 2, size=40)
    preds = rng.integers(0, 2, size=40)
    order = rng.permutation(40)
    assert confusion(preds, truths, np.arange(40)) == confusion(preds[order], truths[order], np.arange(40))


def test_aggregate() -> None:
    a = metrics(ConfusionMatrix(tp=40, fp=10, fn=10, tn=40))
    b = metrics(ConfusionMatrix(tp=45, fp=5, fn=5, tn=45))
    agg = aggregate([a, b])
    assert agg.runs == 2
    assert agg.mean.accuracy == approx(0.85)
    assert agg.std.accuracy == approx(0.0707106781)
    assert len(agg.mean.precision) == 2
    single = aggregate([a])
    assert single.mean == a
    assert single.std.accuracy == 0.0 and single.std.f1 == [0.0, 0.0]
    same = aggregate([a, a, a])
    assert same.std.macro_f1 == 0.0
    assert min(a.macro_f1, b.macro_f1) <= agg.mean.macro_f1 <= max(a.macro_f1, b.macro_f1)
    with raises(EvaluationError):
        aggregate([])


def test_report_json_keys() -> None:
    js = json_dump(ConfusionMatrix(tp=1, fp=2, fn=3, tn=4))
    assert js["tp"] == 1 and js["tn"] == 4  # type: ignore
    js = json_dump(metrics(ConfusionMatrix(tp=1, fp=2, fn=3, tn=4)))
    assert set(js) == {"accuracy", "macro_precision", "macro_recall", "macro_f1", "precision", "recall", "f1"}  # type: ignore


def quick_config(**kwargs: object) -> RunConfig:
    values = dict(dataset="unused", hidden=8, epochs=5, runs=2, seed=4)
    values.update(kwargs)
    return RunConfig(**values)  # type: ignore


def test_sweep_grids() -> None:
    assert len(MASK_RATE_GRID) == 9
    assert PSEUDO_FRACTION_GRID == [0.01, 0.05, 0.10, 0.50, 0.90]
    ds = generate_synthetic(small_synth)
    result = sweep(SweepParameter.mask_rate, [0.1, 0.5, 0.9], quick_config(mode=Mode.glpn), ds)
    assert len(result) == 3
    assert [e.value for e in result.entries] == [0.1, 0.5, 0.9]
    assert all(e.aggregate.runs == 2 for e in result.entries)
    # each grid point keeps its per-run reports next to the aggregate
    assert all([r.seed for r in e.runs] == [4, 5] for e in result.entries)
    assert all(r.confusion.total == ds.n_test for e in result.entries for r in e.runs)
    js = json_dump(result)
    assert set(js["entries"][0]) == {"value", "runs", "aggregate"}  # type: ignore
    assert set(js["entries"][0]["runs"][0]) == {"seed", "metrics", "confusion"}  # type: ignore


def test_singleton_sweep_equals_a_plain_run() -> None:
    ds = generate_synthetic(small_synth)
    cfg = quick_config(mode=Mode.glpn_llm, pseudo_fraction=0.1)
    result = sweep(SweepParameter.pseudo_fraction, [0.1], cfg, ds)
    assert len(result) == 1
    assert result.entries[0].aggregate == run_experiment(cfg, ds).aggregate


def test_parallel_sweep_matches_sequential() -> None:
    ds = generate_synthetic(small_synth)
    grid = [0.2, 0.4, 0.6]
    sequential = sweep(SweepParameter.mask_rate, grid, quick_config(mode=Mode.glpn), ds)
    parallel = sweep(SweepParameter.mask_rate, grid, quick_config(mode=Mode.glpn, threads=3), ds)
    assert [e.aggregate for e in parallel.entries] == [e.aggregate for e in sequential.entries]


def test_sweep_errors() -> None:
    ds = generate_synthetic(small_synth)
    with raises(EvaluationError):
        sweep(SweepParameter.mask_rate, [], quick_config(), ds)
    with raises(EvaluationError):
        sweep(SweepParameter.mask_rate, [0.5, 1.5], quick_config(), ds)
