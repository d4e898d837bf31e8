"""
Transductive fake-news classification on a cross-modal similarity graph.

Train and test records share one graph built from text and image embeddings. A two-layer GCN
propagates ground-truth labels and confidence-filtered LLM pseudo labels across it.

    from glpn import RunConfig, run_experiment

    report = run_experiment(RunConfig(dataset="data.jsonl"))
    print(report.aggregate.mean.accuracy)
"""
from glpn.config import EndpointConfig, Mode, RunConfig, merge_config
from glpn.models import Dataset, GlpnError
from glpn.pipeline import ExperimentReport, run_experiment

__all__ = [
    "Dataset",
    "EndpointConfig",
    "ExperimentReport",
    "GlpnError",
    "Mode",
    "RunConfig",
    "merge_config",
    "run_experiment",
]
