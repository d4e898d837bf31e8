"""
Command line interface: `glpn <command> [flags]`.

Commands write their outputs under --out with stable file names. Run-level settings come from
flags, then the JSON file given with --config, then the built-in defaults.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from glpn.config import ENV_API_KEY, ENV_BASE_URL, ENV_MODEL, ConfigError, Mode, RunConfig, load_config_file, merge_config
from glpn.dataset import generate_synthetic, load_dataset, save_dataset
from glpn.evaluation import MASK_RATE_GRID, PSEUDO_FRACTION_GRID, SweepParameter, sweep
from glpn.graph import graph_stats, save_graph
from glpn.json_utils import json_dump, write_json
from glpn.labeler import save_pseudo_labels, verdict_quality
from glpn.models import GlpnError, PromptStyle, SynthConfig, VerdictSource
from glpn.pipeline import acquire_pseudo_labels, prepare, run_experiment

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.json"
SWEEP_FILE = "sweep.json"
GRAPH_FILE = "graph.jsonl"
PSEUDO_FILE = "pseudo.jsonl"
FIXTURE_FILE = "fixtures.jsonl"
MODEL_FILE = "model.bin"

_defaults = RunConfig()

# flag destinations that live in the nested endpoint section of RunConfig
_endpoint_flags = {
    "base_url": "endpoint_base_url",
    "model": "endpoint_model",
    "max_retries": "endpoint_max_retries",
    "concurrency": "endpoint_concurrency",
    "parse_retries": "endpoint_parse_retries",
    "timeout_seconds": "endpoint_timeout",
    "custom_ca_cert_path": "endpoint_ca_cert",
}


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _grid(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma separated list of numbers")
    if not values:
        raise argparse.ArgumentTypeError("the grid is empty")
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    parser.add_argument(
        "--threads", type=_positive_int, default=argparse.SUPPRESS, help=f"worker threads (default {_defaults.threads})"
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        default=argparse.SUPPRESS,
        help="single-threaded numeric paths for byte-identical outputs",
    )


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument("--config", default=None, help="JSON file with RunConfig keys")
    parser.add_argument("--dataset", default=s, help="dataset JSON Lines file")
    parser.add_argument("--out", default=s, help=f"output directory (default {_defaults.out})")
    parser.add_argument(
        "--mode", choices=[m.value for m in Mode], default=s, help=f"ablation tier (default {_defaults.mode.value})"
    )
    parser.add_argument("--graph", default=s, help="use a cached graph file instead of building the graph")
    parser.add_argument("--theta", type=float, default=s, help=f"similarity threshold (default {_defaults.theta})")
    parser.add_argument("--rho", type=_unit_interval, default=s, help=f"mask rate (default {_defaults.rho})")
    parser.add_argument(
        "--pseudo-fraction",
        dest="pseudo_fraction",
        type=_unit_interval,
        default=s,
        help=f"share of the test set kept as pseudo labels (default {_defaults.pseudo_fraction})",
    )
    parser.add_argument("--hidden", type=_positive_int, default=s, help=f"hidden width (default {_defaults.hidden})")
    parser.add_argument(
        "--learning-rate", dest="learning_rate", type=float, default=s, help=f"Adam step size (default {_defaults.learning_rate})"
    )
    parser.add_argument("--epochs", type=_positive_int, default=s, help=f"epochs per run (default {_defaults.epochs})")
    parser.add_argument("--runs", type=_positive_int, default=s, help=f"runs with distinct seeds (default {_defaults.runs})")
    parser.add_argument("--seed", type=int, default=s, help=f"base seed (default {_defaults.seed})")
    parser.add_argument(
        "--lp-iterations", dest="lp_iterations", type=_positive_int, default=s, help=f"label propagation steps (default {_defaults.lp_iterations})"
    )
    _add_pseudo_flags(parser)


def _add_pseudo_flags(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument(
        "--pseudo",
        dest="pseudo_source",
        choices=[v.value for v in VerdictSource],
        default=s,
        help=f"pseudo label source (default {_defaults.pseudo_source.value})",
    )
    parser.add_argument("--fixtures", default=s, help="recorded responses: replayed by 'fixture', written by 'live'")
    parser.add_argument("--pseudo-labels", dest="pseudo_labels", default=s, help="pseudo-label file for source 'file'")
    parser.add_argument(
        "--template", choices=[p.value for p in PromptStyle], default=s, help=f"prompt (default {_defaults.template.value})"
    )
    parser.add_argument(
        "--oracle-accuracy",
        dest="oracle_accuracy",
        type=_unit_interval,
        default=s,
        help=f"share of correct simulated verdicts (default {_defaults.oracle_accuracy})",
    )
    parser.add_argument(
        "--oracle-sharpness",
        dest="oracle_sharpness",
        type=float,
        default=s,
        help=f"confidence separation of simulated verdicts (default {_defaults.oracle_sharpness})",
    )
    parser.add_argument("--base-url", dest="endpoint_base_url", default=s, help=f"chat endpoint url (env {ENV_BASE_URL})")
    parser.add_argument("--model", dest="endpoint_model", default=s, help=f"chat model name (env {ENV_MODEL})")
    parser.add_argument("--max-retries", dest="endpoint_max_retries", type=int, default=s, help="transport retries")
    parser.add_argument("--concurrency", dest="endpoint_concurrency", type=_positive_int, default=s, help="requests in flight")
    parser.add_argument("--parse-retries", dest="endpoint_parse_retries", type=int, default=s, help="retries of unparseable responses")
    parser.add_argument("--timeout", dest="endpoint_timeout", type=float, default=s, help="request timeout in seconds")
    parser.add_argument("--ca-cert", dest="endpoint_ca_cert", default=s, help="custom CA certificate for the endpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glpn",
        description="Graph label propagation with LLM pseudo labels for multimodal fake news detection.",
        epilog=f"The API key for live pseudo labeling is read from {ENV_API_KEY}.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    d = SynthConfig()
    synth.add_argument("--out", required=True, help="dataset file to write")
    synth.add_argument("--seed", type=int, default=d.seed, help="generator seed")
    synth.add_argument("--n-train", dest="n_per_class_train", type=_positive_int, default=d.n_per_class_train, help="train records per class")
    synth.add_argument("--n-test", dest="n_per_class_test", type=_positive_int, default=d.n_per_class_test, help="test records per class")
    synth.add_argument("--dim-text", dest="d_t", type=_positive_int, default=d.d_t, help="text embedding dimension")
    synth.add_argument("--dim-image", dest="d_v", type=_positive_int, default=d.d_v, help="image embedding dimension")
    synth.add_argument("--separation", dest="class_separation", type=float, default=d.class_separation, help="class mean distance")
    synth.add_argument("--noise", dest="noise_sigma", type=float, default=d.noise_sigma, help="per record noise")
    synth.add_argument(
        "--correlation", dest="modality_correlation", type=_unit_interval, default=d.modality_correlation, help="text/image cluster agreement"
    )
    synth.add_argument("--story-size", dest="story_size", type=_positive_int, default=d.story_size, help="records per story")
    synth.add_argument("--story-spread", dest="story_spread", type=float, default=d.story_spread, help="spread of story centers")
    synth.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")

    graph = commands.add_parser("build-graph", help=f"build the cross-modal graph and write {GRAPH_FILE}")
    graph.add_argument("--config", default=None, help="JSON file with RunConfig keys")
    graph.add_argument("--dataset", default=argparse.SUPPRESS, help="dataset JSON Lines file")
    graph.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default {_defaults.out})")
    graph.add_argument("--theta", type=float, default=argparse.SUPPRESS, help=f"similarity threshold (default {_defaults.theta})")
    _add_common(graph)

    pseudo = commands.add_parser("pseudo-label", help=f"label the test split with the LLM and write {PSEUDO_FILE}")
    pseudo.add_argument("--config", default=None, help="JSON file with RunConfig keys")
    pseudo.add_argument("--dataset", default=argparse.SUPPRESS, help="dataset JSON Lines file")
    pseudo.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default {_defaults.out})")
    pseudo.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"oracle seed (default {_defaults.seed})")
    _add_pseudo_flags(pseudo)
    _add_common(pseudo)

    run = commands.add_parser("run", help=f"train and evaluate, write {METRICS_FILE}")
    _add_run_flags(run)
    run.add_argument("--save-model", dest="save_model", action="store_true", help=f"write {MODEL_FILE} for GCN modes")
    _add_common(run)

    sw = commands.add_parser("sweep", help=f"sweep mask rate or pseudo fraction, write {SWEEP_FILE}")
    _add_run_flags(sw)
    sw.add_argument("--parameter", choices=[p.value for p in SweepParameter], required=True, help="swept parameter")
    sw.add_argument("--grid", type=_grid, default=None, help="comma separated values (default: the standard grid for the parameter)")
    _add_common(sw)
    return parser


def setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    given: Dict[str, Any] = dict(vars(args))
    endpoint = {key: given.pop(flag) for key, flag in _endpoint_flags.items() if flag in given}
    flags = {k: v for k, v in given.items() if k in RunConfig.__dataclass_fields__ and k != "endpoint"}
    if endpoint:
        flags["endpoint"] = endpoint
    file_values = load_config_file(args.config) if getattr(args, "config", None) else None
    return merge_config(file_values, flags)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _default_fixture_cache(cfg: RunConfig, out: Path) -> None:
    # live responses are always recorded so a run can be replayed offline
    if cfg.mode.uses_pseudo_labels and cfg.pseudo_source == VerdictSource.Live and cfg.fixtures is None:
        cfg.fixtures = str(out / FIXTURE_FILE)


def cmd_synth(args: argparse.Namespace) -> None:
    cfg = SynthConfig(
        n_per_class_train=args.n_per_class_train,
        n_per_class_test=args.n_per_class_test,
        d_t=args.d_t,
        d_v=args.d_v,
        class_separation=args.class_separation,
        noise_sigma=args.noise_sigma,
        modality_correlation=args.modality_correlation,
        seed=args.seed,
        story_size=args.story_size,
        story_spread=args.story_spread,
    )
    ds = generate_synthetic(cfg)
    save_dataset(ds, args.out)
    print(f"Wrote {ds.n} records to {args.out}")


def cmd_build_graph(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    if cfg.dataset is None:
        raise ConfigError("dataset", "a dataset file is required")
    ds = load_dataset(cfg.dataset)
    _, graph = prepare(cfg, ds)
    path = _out_dir(cfg) / GRAPH_FILE
    save_graph(graph, path)
    stats = graph_stats(graph, ds)
    print(f"Wrote {stats.edge_count} edges over {stats.n} nodes ({stats.isolated} isolated) to {path}")


def cmd_pseudo_label(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    if cfg.dataset is None:
        raise ConfigError("dataset", "a dataset file is required")
    out = _out_dir(cfg)
    cfg.mode = Mode.glpn_llm
    _default_fixture_cache(cfg, out)
    cfg.validate()
    ds = load_dataset(cfg.dataset)
    ps = acquire_pseudo_labels(cfg, ds)
    path = out / PSEUDO_FILE
    save_pseudo_labels(ps, path)
    quality = verdict_quality(ps, ds)
    print(f"Wrote {len(ps)} pseudo labels to {path} (accuracy on held-out labels: {quality.accuracy})")


def cmd_run(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    out = _out_dir(cfg)
    _default_fixture_cache(cfg, out)
    report = run_experiment(cfg, checkpoint_path=str(out / MODEL_FILE) if args.save_model else None)
    path = out / METRICS_FILE
    write_json(path, json_dump(report))
    mean, std = report.aggregate.mean, report.aggregate.std
    print(f"{cfg.mode.value}: accuracy {mean.accuracy:.4f} ± {std.accuracy:.4f}, macro F1 {mean.macro_f1:.4f} -> {path}")


def cmd_sweep(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    parameter = SweepParameter(args.parameter)
    grid = args.grid
    if grid is None:
        grid = MASK_RATE_GRID if parameter == SweepParameter.mask_rate else PSEUDO_FRACTION_GRID
    out = _out_dir(cfg)
    _default_fixture_cache(cfg, out)
    result = sweep(parameter, grid, cfg)
    path = out / SWEEP_FILE
    write_json(path, {"config": cfg.to_json(), "sweep": json_dump(result)})
    print(f"Wrote {len(result)} sweep entries over {parameter.value} to {path}")


_commands: Dict[str, Callable[[argparse.Namespace], None]] = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "pseudo-label": cmd_pseudo_label,
    "run": cmd_run,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        _commands[args.command](args)
    except (GlpnError, ValueError, OSError) as e:
        if args.verbose >= 2:
            log.exception("Command failed")
        print(f"glpn {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0
