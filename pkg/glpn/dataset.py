import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from glpn.json_utils import JsonLinesError, PathLike, read_jsonl, write_jsonl
from glpn.models import (
    Dataset,
    FloatArray,
    GlpnError,
    IntArray,
    JsObject,
    JsValue,
    LlmVerdict,
    NewsRecord,
    Split,
    SynthConfig,
)
from glpn.prompts import parse_verdict

log = logging.getLogger(__name__)


class DatasetParseError(GlpnError):
    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class DatasetValidationError(GlpnError):
    def __init__(self, record_id: str, rule: str) -> None:
        super().__init__(f"record {record_id!r}: {rule}")
        self.record_id = record_id
        self.rule = rule


class MissingLabelError(GlpnError):
    def __init__(self, record_id: str) -> None:
        super().__init__(f"record {record_id!r} has no held-out label")
        self.record_id = record_id


def _check_vector(record_id: str, name: str, vector: FloatArray, expected_dim: Optional[int]) -> None:
    if vector.ndim != 1 or vector.shape[0] == 0:
        raise DatasetValidationError(record_id, f"{name} must be a non-empty vector")
    if expected_dim is not None and vector.shape[0] != expected_dim:
        raise DatasetValidationError(record_id, f"{name} has dimension {vector.shape[0]}, expected {expected_dim}")
    if not np.all(np.isfinite(vector)):
        raise DatasetValidationError(record_id, f"{name} contains non-finite values")
    if not np.any(vector):
        raise DatasetValidationError(record_id, f"{name} is the all-zero vector")


def dataset_from_records(records: Sequence[NewsRecord]) -> Dataset:
    """
    Validate the record invariants and wrap them into a Dataset.
    The dimensions are taken from the first record.
    """
    if not records:
        raise DatasetValidationError("<none>", "dataset is empty")
    d_t = int(records[0].text_embedding.shape[0]) if records[0].text_embedding.ndim == 1 else None
    d_v = int(records[0].image_embedding.shape[0]) if records[0].image_embedding.ndim == 1 else None
    seen: Set[str] = set()
    n_train = 0
    for record in records:
        if record.id in seen:
            raise DatasetValidationError(record.id, "duplicate id")
        seen.add(record.id)
        if record.label is not None and record.label not in (0, 1):
            raise DatasetValidationError(record.id, f"label must be 0 or 1, got {record.label}")
        if record.split == Split.train:
            n_train += 1
            if record.label is None:
                raise DatasetValidationError(record.id, "train record without label")
        _check_vector(record.id, "text_embedding", record.text_embedding, d_t)
        _check_vector(record.id, "image_embedding", record.image_embedding, d_v)
    assert d_t is not None and d_v is not None
    return Dataset(records=list(records), d_t=d_t, d_v=d_v, n_train=n_train, n_test=len(records) - n_train)


def _parse_record(path: str, line: int, obj: JsObject) -> NewsRecord:
    def fail(reason: str) -> DatasetParseError:
        return DatasetParseError(path, line, reason)

    rid = obj.get("id")
    if not isinstance(rid, str):
        raise fail("key 'id' must be a string")
    split = obj.get("split")
    if split not in ("train", "test"):
        raise fail(f"record {rid!r}: key 'split' must be 'train' or 'test'")
    label = obj.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise fail(f"record {rid!r}: key 'label' must be 0, 1 or null")
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise fail(f"record {rid!r}: key 'text' must be a string or null")

    def vector(key: str) -> FloatArray:
        value = obj.get(key)
        if not isinstance(value, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value  # type: ignore
        ):
            raise fail(f"record {rid!r}: key {key!r} must be an array of numbers")
        return np.array(value, dtype=np.float64)

    return NewsRecord(
        id=rid,
        split=Split(split),
        label=label,
        text_embedding=vector("text_embedding"),
        image_embedding=vector("image_embedding"),
        text=text,
    )


def load_dataset(path: PathLike) -> Dataset:
    """
    Load a JSON Lines dataset. Record order equals file order.
    """
    records: List[NewsRecord] = []
    try:
        for line, obj in read_jsonl(path):
            records.append(_parse_record(str(path), line, obj))
    except JsonLinesError as e:
        raise DatasetParseError(str(path), e.line, e.reason) from e
    ds = dataset_from_records(records)
    log.info(f"Loaded {ds.n} records from {path}: {ds.n_train} train, {ds.n_test} test, d_t={ds.d_t}, d_v={ds.d_v}")
    return ds


def record_to_json(record: NewsRecord) -> JsObject:
    return {
        "id": record.id,
        "split": record.split.value,
        "label": record.label,
        "text_embedding": [float(x) for x in record.text_embedding],
        "image_embedding": [float(x) for x in record.image_embedding],
        "text": record.text,
    }


def save_dataset(ds: Dataset, path: PathLike) -> None:
    rows: List[JsValue] = [record_to_json(r) for r in ds.records]
    write_jsonl(path, rows)


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    dataset: Dataset
    text_cluster: IntArray
    image_cluster: IntArray
    story: IntArray


def _validate_synth(cfg: SynthConfig) -> None:
    def fail(rule: str) -> DatasetValidationError:
        return DatasetValidationError("<synth-config>", rule)

    if cfg.n_per_class_train < 1 or cfg.n_per_class_test < 1:
        raise fail("per-class counts must be >= 1")
    if cfg.d_t < 1 or cfg.d_v < 1:
        raise fail("dimensions must be >= 1")
    if not cfg.class_separation >= 0:
        raise fail("class_separation must be >= 0")
    if not cfg.noise_sigma > 0:
        raise fail("noise_sigma must be > 0")
    if not 0.0 <= cfg.modality_correlation <= 1.0:
        raise fail("modality_correlation must be in [0, 1]")
    if cfg.story_size < 1:
        raise fail("story_size must be >= 1")
    if not cfg.story_spread >= 0:
        raise fail("story_spread must be >= 0")


def _class_means(rng: np.random.Generator, dim: int, separation: float) -> Tuple[FloatArray, FloatArray]:
    # shared base direction plus a class direction orthogonal to it
    base = rng.standard_normal(dim)
    base /= np.linalg.norm(base)
    direction = rng.standard_normal(dim)
    if dim > 1:
        direction -= direction.dot(base) * base
    direction /= np.linalg.norm(direction)
    half = 0.5 * separation * direction
    return base - half, base + half


def _unit_rows(m: FloatArray) -> FloatArray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    # a zero row has probability zero under continuous noise
    norms[norms == 0.0] = 1.0
    return m / norms


def draw_synthetic(cfg: SynthConfig) -> SyntheticSample:
    """
    Draw a two-class dataset of unit-norm embeddings with the latent cluster assignments.

    Records come in stories of `story_size` near duplicates sharing one class. Text embeddings sit around
    the text mean of their class; the image cluster equals the text cluster with probability
    `modality_correlation` and is flipped otherwise.
    """
    _validate_synth(cfg)
    rng = np.random.default_rng(cfg.seed)
    text_means = _class_means(rng, cfg.d_t, cfg.class_separation)
    image_means = _class_means(rng, cfg.d_v, cfg.class_separation)

    classes: List[int] = []
    splits: List[Split] = []
    stories: List[int] = []
    story_id = 0
    for cls in (0, 1):
        n_cls = cfg.n_per_class_train + cfg.n_per_class_test
        split_of = np.array([Split.train] * cfg.n_per_class_train + [Split.test] * cfg.n_per_class_test)
        split_of = split_of[rng.permutation(n_cls)]
        for k in range(n_cls):
            if k % cfg.story_size == 0 and k > 0:
                story_id += 1
            classes.append(cls)
            splits.append(split_of[k])
            stories.append(story_id)
        story_id += 1

    n = len(classes)
    text_cluster = np.array(classes, dtype=np.int64)
    flip = rng.random(n) >= cfg.modality_correlation
    image_cluster = np.where(flip, 1 - text_cluster, text_cluster).astype(np.int64)
    story = np.array(stories, dtype=np.int64)

    n_stories = int(story.max()) + 1
    story_text = rng.standard_normal((n_stories, cfg.d_t)) * cfg.story_spread
    story_image = rng.standard_normal((n_stories, cfg.d_v)) * cfg.story_spread
    text = np.vstack([text_means[c] for c in text_cluster]) + story_text[story]
    image = np.vstack([image_means[c] for c in image_cluster]) + story_image[story]
    text = _unit_rows(text + cfg.noise_sigma * rng.standard_normal((n, cfg.d_t)))
    image = _unit_rows(image + cfg.noise_sigma * rng.standard_normal((n, cfg.d_v)))

    # node order must not reveal the class
    order = rng.permutation(n)
    width = max(4, len(str(n - 1)))
    records = [
        NewsRecord(
            id=f"n{pos:0{width}d}",
            split=splits[i],
            label=int(text_cluster[i]),
            text_embedding=text[i].copy(),
            image_embedding=image[i].copy(),
            text=f"Story {int(story[i])}: synthetic news item {pos}.",
        )
        for pos, i in enumerate(order)
    ]
    return SyntheticSample(
        dataset=dataset_from_records(records),
        text_cluster=text_cluster[order],
        image_cluster=image_cluster[order],
        story=story[order],
    )


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    ds = draw_synthetic(cfg).dataset
    log.info(f"Generated synthetic dataset: {ds.n_train} train, {ds.n_test} test, seed={cfg.seed}")
    return ds


def oracle_pseudo_labels(
    ds: Dataset, accuracy: float, conf_sharpness: float, seed: int
) -> List[Tuple[str, LlmVerdict]]:
    """
    Simulate an LLM labeling every test record.

    A verdict is correct with probability `accuracy`. Confidences lie in [0.5, 1]: correct verdicts draw
    0.5 + 0.5 * u^(1/k), incorrect ones 0.5 + 0.5 * u^k with k = 1 + conf_sharpness, so correct verdicts
    stochastically dominate and the gap widens with the sharpness.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise DatasetValidationError("<oracle>", "accuracy must be in [0, 1]")
    if not conf_sharpness > 0:
        raise DatasetValidationError("<oracle>", "conf_sharpness must be > 0")
    rng = np.random.default_rng(seed)
    k = 1.0 + conf_sharpness
    verdicts: List[Tuple[str, LlmVerdict]] = []
    for i in ds.test_indices:
        record = ds.records[int(i)]
        if record.label is None:
            raise MissingLabelError(record.id)
        correct = bool(rng.random() < accuracy)
        u = float(rng.random())
        pred = record.label if correct else 1 - record.label
        confidence = 0.5 + 0.5 * (u ** (1.0 / k) if correct else u**k)
        percent = math.floor(confidence * 1000.0 + 0.5) / 10.0
        # verdicts go through the same parser as live responses
        verdicts.append((record.id, parse_verdict(f"Result: {pred}, Confidence: {percent:.1f}%")))
    return verdicts
