import json
from pathlib import Path
from typing import AsyncIterator, Tuple

from pytest import approx, fixture, mark, raises

from glpn.async_client import LlmTransportError
from glpn.config import EndpointConfig
from glpn.dataset import dataset_from_records, generate_synthetic
from glpn.http_client.event_loop_thread import EventLoopThread
from glpn.labeler import (
    FixtureError,
    fetch_verdicts,
    fetch_verdicts_async,
    filter_top_fraction,
    kept_count,
    load_fixtures,
    load_pseudo_labels,
    oracle_verdicts,
    replay_fixtures,
    save_fixtures,
    save_pseudo_labels,
    verdict_quality,
)
from glpn.models import Dataset, JsObject, Split, VerdictSource
from glpn.prompts import DETAILED, SIMPLE, EmptyTextError
from tests import StubChat, held_out_ids, pseudo_set, record, small_synth, user_text


def news_dataset() -> Dataset:
    return dataset_from_records(
        [
            record("t1", label=0),
            record("t2", label=1),
            record("a", split=Split.test, label=1, content="ALERT: storms expected tomorrow"),
            record("b", split=Split.test, label=0, content="CONFIRMED: aliens on Mars"),
            record("c", split=Split.test, label=None, content="Local team wins"),
        ]
    )


@fixture
async def stub() -> AsyncIterator[StubChat]:
    chat = StubChat()
    await chat.start()
    yield chat
    await chat.stop()


def test_replay_fixtures(tmp_path: Path) -> None:
    path = tmp_path / "fixtures.jsonl"
    save_fixtures(
        path,
        {
            "a": "Result: 1, Confidence: 90%",
            "b": "Result: 0, Confidence: 75%\nReason: no source",
            "c": "I cannot tell.",
        },
    )
    ps = replay_fixtures(news_dataset(), path)
    assert ps.source == VerdictSource.Fixture
    assert sorted(ps.verdicts) == ["a", "b"]
    assert (ps.verdicts["b"].pred, ps.verdicts["b"].confidence, ps.verdicts["b"].reason) == (0, 0.75, "no source")
    # replay is reproducible
    assert replay_fixtures(news_dataset(), path).verdicts == ps.verdicts


def test_fixture_errors(tmp_path: Path) -> None:
    path = tmp_path / "fixtures.jsonl"
    save_fixtures(path, {"t1": "Result: 1, Confidence: 90%"})
    with raises(FixtureError, match="not a test record"):
        replay_fixtures(news_dataset(), path)
    path.write_text('{"id": "a", "raw": "x"}\n{"id": "a", "raw": "y"}\n')
    with raises(FixtureError) as e:
        load_fixtures(path)
    assert e.value.line == 2
    path.write_text('{"id": "a"}\n')
    with raises(FixtureError):
        load_fixtures(path)


def test_kept_count() -> None:
    assert kept_count(0.05, 100) == 5
    assert kept_count(0.29, 100) == 29
    assert kept_count(0.0, 100) == 0
    assert kept_count(1.0, 7) == 7
    assert kept_count(0.5, 3) == 1


def test_filter_top_fraction() -> None:
    ps = pseudo_set([(f"n{i:03d}", i % 2, (i * 37 % 100) / 100) for i in range(100)])
    kept = filter_top_fraction(ps, 0.05)
    assert len(kept) == 5
    assert kept.source == ps.source
    lowest_kept = min(v.confidence for v in kept.verdicts.values())
    assert all(v.confidence <= lowest_kept for rid, v in ps.verdicts.items() if rid not in kept.verdicts)
    assert len(filter_top_fraction(ps, 0.0)) == 0
    assert len(filter_top_fraction(ps, 1.0)) == 100
    # the pool is the test set, verdicts may be missing for some of it
    assert len(filter_top_fraction(ps, 0.05, pool_size=200)) == 10
    with raises(ValueError):
        filter_top_fraction(ps, 1.5)


def test_filter_ties_by_id() -> None:
    ps = pseudo_set([("b", 1, 0.9), ("a", 0, 0.9), ("c", 1, 0.8), ("d", 0, 0.7)])
    assert set(filter_top_fraction(ps, 0.5).verdicts) == {"a", "b"}
    assert list(filter_top_fraction(ps, 0.25).verdicts) == ["a"]


def test_filter_is_monotone() -> None:
    ds = generate_synthetic(small_synth)
    ps = oracle_verdicts(ds, 0.8, 2.0, seed=1)
    previous: set = set()  # type: ignore
    for fraction in (0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0):
        kept = set(filter_top_fraction(ps, fraction).verdicts)
        assert previous <= kept
        previous = kept


def test_pseudo_label_file_round_trip(tmp_path: Path) -> None:
    ds = generate_synthetic(small_synth)
    ps = oracle_verdicts(ds, 0.8, 2.0, seed=1)
    path = tmp_path / "pseudo.jsonl"
    save_pseudo_labels(ps, path)
    loaded = load_pseudo_labels(path)
    assert loaded.source == VerdictSource.File
    assert sorted(loaded.verdicts) == sorted(held_out_ids(ds))
    for rid, v in ps.verdicts.items():
        assert (loaded.verdicts[rid].pred, loaded.verdicts[rid].confidence) == (v.pred, v.confidence)

    path.write_text('{"id": "a", "pred": 2, "confidence": 0.5, "reason": null}\n')
    with raises(FixtureError, match="pred"):
        load_pseudo_labels(path)
    path.write_text('{"id": "a", "pred": 1, "confidence": 50, "reason": null}\n')
    with raises(FixtureError, match="confidence"):
        load_pseudo_labels(path)


def test_verdict_quality() -> None:
    ds = news_dataset()
    quality = verdict_quality(pseudo_set([("a", 1, 0.9), ("b", 1, 0.6), ("c", 1, 0.99)]), ds)
    # "c" has no held-out label
    assert quality.count == 2
    assert quality.accuracy == approx(0.5)
    assert quality.mean_confidence_correct == approx(0.9)
    assert quality.mean_confidence_incorrect == approx(0.6)
    assert verdict_quality(pseudo_set([]), ds).accuracy is None


def reply_by_text(body: JsObject, index: int) -> Tuple[int, str]:
    text = user_text(body)
    if text.startswith("ALERT"):
        return 200, "Result: 1, Confidence: 95%"
    if text.startswith("CONFIRMED"):
        return 200, "Result: 0, Confidence: 30%\nReason: no evidence"
    return 200, "Result: 1, Confidence: 60%"


@mark.asyncio
async def test_fetch_verdicts(stub: StubChat, tmp_path: Path) -> None:
    stub.reply = reply_by_text
    cache = tmp_path / "fixtures.jsonl"
    cfg = EndpointConfig(base_url=stub.base_url, backoff_factor=0.0, concurrency=2)
    ps = await fetch_verdicts_async(news_dataset(), DETAILED, cfg, cache_path=cache)
    assert ps.source == VerdictSource.Live
    assert {rid: (v.pred, v.confidence) for rid, v in ps.verdicts.items()} == {
        "a": (1, approx(0.95)),
        "b": (0, approx(0.30)),
        "c": (1, approx(0.60)),
    }
    assert stub.request_count == 3
    # only test records are sent, with the full few-shot conversation
    assert all(len(body["messages"]) == 8 for body in stub.bodies)  # type: ignore
    cached = [json.loads(line) for line in cache.read_text().splitlines()]
    assert [c["id"] for c in cached] == ["a", "b", "c"]
    assert replay_fixtures(news_dataset(), cache).verdicts == ps.verdicts


@mark.asyncio
async def test_fetch_retries_unparseable_responses(stub: StubChat) -> None:
    answers = {"a": ["no idea", "Result: 1, Confidence: 70%"], "b": ["hmm", "still no idea"]}

    def reply(body: JsObject, index: int) -> Tuple[int, str]:
        text = user_text(body)
        key = "a" if text.startswith("ALERT") else "b" if text.startswith("CONFIRMED") else "c"
        pending = answers.get(key)
        return 200, pending.pop(0) if pending else "Result: 0, Confidence: 51%"

    stub.reply = reply
    cfg = EndpointConfig(base_url=stub.base_url, backoff_factor=0.0, parse_retries=1, concurrency=1)
    ps = await fetch_verdicts_async(news_dataset(), SIMPLE, cfg)
    assert ps.verdicts["a"].pred == 1
    assert "b" not in ps.verdicts
    assert ps.verdicts["c"].pred == 0
    assert stub.request_count == 5


@mark.asyncio
async def test_failed_record_keeps_the_other_responses(stub: StubChat, tmp_path: Path) -> None:
    def reply(body: JsObject, index: int) -> Tuple[int, str]:
        if user_text(body).startswith("CONFIRMED"):
            return 401, "bad key"
        return reply_by_text(body, index)

    stub.reply = reply
    cache = tmp_path / "fixtures.jsonl"
    cfg = EndpointConfig(base_url=stub.base_url, backoff_factor=0.0, concurrency=1)
    with raises(LlmTransportError) as e:
        await fetch_verdicts_async(news_dataset(), DETAILED, cfg, cache_path=cache)
    assert e.value.status == 401
    assert stub.request_count == 3
    assert sorted(load_fixtures(cache)) == ["a", "c"]
    assert replay_fixtures(news_dataset(), cache).verdicts["a"].pred == 1


@mark.asyncio
async def test_fetch_needs_text(stub: StubChat) -> None:
    ds = dataset_from_records([record("t1"), record("x", split=Split.test, label=None, content=None)])
    with raises(EmptyTextError):
        await fetch_verdicts_async(ds, DETAILED, EndpointConfig(base_url=stub.base_url))
    assert stub.request_count == 0


def test_fetch_verdicts_blocking() -> None:
    chat = StubChat(reply_by_text)
    with EventLoopThread(daemon=True) as server_thread:  # type: ignore
        base_url = server_thread.run_coroutine(chat.start())
        try:
            ps = fetch_verdicts(news_dataset(), DETAILED, EndpointConfig(base_url=base_url, backoff_factor=0.0))
        finally:
            server_thread.run_coroutine(chat.stop())
    assert sorted(ps.verdicts) == ["a", "b", "c"]
    assert chat.request_count == 3
