import asyncio
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from glpn.async_client import AsyncChatClient, LlmTransportError
from glpn.config import EndpointConfig
from glpn.dataset import oracle_pseudo_labels
from glpn.http_client import AsyncHttpClient
from glpn.http_client.event_loop_thread import EventLoopThread
from glpn.json_utils import JsonLinesError, PathLike, read_jsonl, write_jsonl
from glpn.models import (
    Dataset,
    GlpnError,
    JsValue,
    LlmVerdict,
    PromptTemplate,
    PseudoLabelSet,
    Split,
    VerdictSource,
)
from glpn.prompts import ChatRequest, VerdictParseError, parse_verdict, render_prompt

log = logging.getLogger(__name__)

DEFAULT_PSEUDO_FRACTION = 0.05


class FixtureError(GlpnError):
    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


def load_fixtures(path: PathLike) -> Dict[str, str]:
    """Read recorded responses: one `{"id": ..., "raw": ...}` object per line."""
    raws: Dict[str, str] = {}
    try:
        for line, obj in read_jsonl(path):
            rid, raw = obj.get("id"), obj.get("raw")
            if not isinstance(rid, str) or not isinstance(raw, str):
                raise FixtureError(str(path), line, "fixture needs string keys 'id' and 'raw'")
            if rid in raws:
                raise FixtureError(str(path), line, f"duplicate id {rid!r}")
            raws[rid] = raw
    except JsonLinesError as e:
        raise FixtureError(str(path), e.line, e.reason) from e
    return raws


def save_fixtures(path: PathLike, raws: Mapping[str, str]) -> None:
    rows: List[JsValue] = [{"id": rid, "raw": raw} for rid, raw in raws.items()]
    write_jsonl(path, rows)


def _parse_all(raws: Mapping[str, str]) -> Dict[str, LlmVerdict]:
    verdicts: Dict[str, LlmVerdict] = {}
    for rid, raw in raws.items():
        try:
            verdicts[rid] = parse_verdict(raw)
        except VerdictParseError as e:
            log.warning(f"Dropping unparseable response for {rid}: {e}")
    return verdicts


def replay_fixtures(ds: Dataset, path: PathLike) -> PseudoLabelSet:
    """
    Parse recorded responses without any network use. Every id must name a test record.
    """
    raws = load_fixtures(path)
    test_ids = {ds.records[int(i)].id for i in ds.test_indices}
    for rid in raws:
        if rid not in test_ids:
            raise FixtureError(str(path), 0, f"id {rid!r} is not a test record of the dataset")
    verdicts = _parse_all(raws)
    log.info(f"Replayed {len(verdicts)} verdicts from {len(raws)} recorded responses in {path}")
    return PseudoLabelSet(verdicts=verdicts, source=VerdictSource.Fixture)


async def _label_one(
    client: AsyncChatClient, request: ChatRequest, parse_retries: int
) -> Tuple[str, str, Optional[LlmVerdict]]:
    raw = ""
    for attempt in range(parse_retries + 1):
        raw = await client.complete(request.messages)
        try:
            return request.record_id, raw, parse_verdict(raw)
        except VerdictParseError as e:
            log.debug(f"Attempt {attempt + 1} for {request.record_id} did not parse: {e}")
    log.warning(f"No parseable response for {request.record_id} after {parse_retries + 1} attempts")
    return request.record_id, raw, None


async def fetch_verdicts_async(
    ds: Dataset,
    tpl: PromptTemplate,
    endpoint: EndpointConfig,
    http_client: Optional[AsyncHttpClient] = None,
    cache_path: Optional[PathLike] = None,
) -> PseudoLabelSet:
    # render everything first: a record without text fails before any request is sent
    requests = [render_prompt(tpl, r) for r in ds.records if r.split == Split.test]
    async with AsyncChatClient(endpoint, http_client) as client:
        outcomes = await asyncio.gather(
            *[_label_one(client, rq, endpoint.parse_retries) for rq in requests], return_exceptions=True
        )
        log.info(f"Sent {client.request_count} chat requests for {len(requests)} test records")
    # gather keeps the request order, so completion order never shows in the result
    results = [o for o in outcomes if not isinstance(o, BaseException)]
    failures = [o for o in outcomes if isinstance(o, BaseException)]
    raws = {rid: raw for rid, raw, _ in results}
    verdicts = {rid: verdict for rid, _, verdict in results if verdict is not None}
    if cache_path is not None:
        save_fixtures(cache_path, raws)
        log.info(f"Cached {len(raws)} raw responses to {cache_path}")
    if failures:
        log.warning(f"{len(failures)} of {len(requests)} records got no response")
        raise next((f for f in failures if isinstance(f, LlmTransportError)), failures[0])
    return PseudoLabelSet(verdicts=verdicts, source=VerdictSource.Live)


def fetch_verdicts(
    ds: Dataset,
    tpl: PromptTemplate,
    endpoint: EndpointConfig,
    cache_path: Optional[PathLike] = None,
) -> PseudoLabelSet:
    """
    Label every test record with the chat endpoint. Blocks until all responses are in.

    Unparseable responses are retried `endpoint.parse_retries` times and then left out of the set.
    All raw responses are written to `cache_path` for replay when given.
    """
    with EventLoopThread(daemon=True) as thread:  # type: ignore
        return thread.run_coroutine(fetch_verdicts_async(ds, tpl, endpoint, cache_path=cache_path))


def oracle_verdicts(ds: Dataset, accuracy: float, conf_sharpness: float, seed: int) -> PseudoLabelSet:
    verdicts = dict(oracle_pseudo_labels(ds, accuracy, conf_sharpness, seed))
    return PseudoLabelSet(verdicts=verdicts, source=VerdictSource.Oracle)


def kept_count(fraction: float, pool_size: int) -> int:
    # the guard keeps binary float artifacts such as 0.29 * 100 = 28.999... from losing one item
    return math.floor(fraction * pool_size + 1e-9)


def filter_top_fraction(
    ps: PseudoLabelSet, fraction: float = DEFAULT_PSEUDO_FRACTION, pool_size: Optional[int] = None
) -> PseudoLabelSet:
    """
    Keep the floor(fraction * pool_size) most confident verdicts, ties broken by ascending id.

    The pool is the test set; it defaults to the number of verdicts, which is the same when every
    test record got a verdict.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    k = kept_count(fraction, len(ps) if pool_size is None else pool_size)
    ranked = sorted(ps.verdicts.items(), key=lambda kv: (-kv[1].confidence, kv[0]))
    return PseudoLabelSet(verdicts=dict(ranked[:k]), source=ps.source)


def save_pseudo_labels(ps: PseudoLabelSet, path: PathLike) -> None:
    rows: List[JsValue] = [
        {"id": rid, "pred": v.pred, "confidence": v.confidence, "reason": v.reason}
        for rid, v in sorted(ps.verdicts.items())
    ]
    write_jsonl(path, rows)


def load_pseudo_labels(path: PathLike) -> PseudoLabelSet:
    verdicts: Dict[str, LlmVerdict] = {}
    try:
        for line, obj in read_jsonl(path):
            rid, pred, conf, reason = obj.get("id"), obj.get("pred"), obj.get("confidence"), obj.get("reason")
            if not isinstance(rid, str):
                raise FixtureError(str(path), line, "key 'id' must be a string")
            if pred not in (0, 1) or isinstance(pred, bool):
                raise FixtureError(str(path), line, "key 'pred' must be 0 or 1")
            if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
                raise FixtureError(str(path), line, "key 'confidence' must be a number in [0, 1]")
            if reason is not None and not isinstance(reason, str):
                raise FixtureError(str(path), line, "key 'reason' must be a string or null")
            raw = f"Result: {pred}, Confidence: {conf * 100.0:g}%"
            verdicts[rid] = LlmVerdict(pred=int(pred), confidence=float(conf), reason=reason, raw=raw)  # type: ignore
    except JsonLinesError as e:
        raise FixtureError(str(path), e.line, e.reason) from e
    return PseudoLabelSet(verdicts=verdicts, source=VerdictSource.File)


@dataclass
class VerdictQuality:
    count: int
    accuracy: Optional[float]
    mean_confidence_correct: Optional[float]
    mean_confidence_incorrect: Optional[float]


def verdict_quality(ps: PseudoLabelSet, ds: Dataset) -> VerdictQuality:
    """
    Score verdicts against the held-out labels. Evaluation only: nothing here feeds back into training.
    """
    correct: List[float] = []
    incorrect: List[float] = []
    for rid, verdict in ps.verdicts.items():
        label = ds.records[ds.index[rid]].label
        if label is None:
            continue
        (correct if verdict.pred == label else incorrect).append(verdict.confidence)
    total = len(correct) + len(incorrect)

    def mean(xs: List[float]) -> Optional[float]:
        return sum(xs) / len(xs) if xs else None

    return VerdictQuality(
        count=total,
        accuracy=len(correct) / total if total else None,
        mean_confidence_correct=mean(correct),
        mean_confidence_incorrect=mean(incorrect),
    )
