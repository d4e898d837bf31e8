from typing import AsyncIterator

from pytest import fixture, mark, raises

from glpn.async_client import AsyncChatClient, LlmTransportError
from glpn.config import EndpointConfig
from tests import StubChat

messages = [{"role": "system", "content": "Be precise."}, {"role": "user", "content": "Some news"}]


@fixture
async def stub() -> AsyncIterator[StubChat]:
    chat = StubChat()
    await chat.start()
    yield chat
    await chat.stop()


def endpoint(stub: StubChat, **kwargs: object) -> EndpointConfig:
    return EndpointConfig(base_url=stub.base_url, api_key="secret", backoff_factor=0.0, **kwargs)  # type: ignore


@mark.asyncio
async def test_complete(stub: StubChat) -> None:
    async with AsyncChatClient(endpoint(stub, model="test-model")) as client:
        assert await client.complete(messages) == "Result: 1, Confidence: 80%"
        assert client.request_count == 1
    assert stub.bodies == [{"model": "test-model", "messages": messages, "temperature": 0.0}]
    assert stub.headers[0]["Authorization"] == "Bearer secret"


@mark.asyncio
async def test_rate_limit_is_retried(stub: StubChat) -> None:
    stub.reply = lambda body, index: (429, "slow down") if index == 0 else (200, "Result: 0, Confidence: 55%")
    async with AsyncChatClient(endpoint(stub)) as client:
        assert await client.complete(messages) == "Result: 0, Confidence: 55%"
        assert client.request_count == 2
    assert stub.request_count == 2


@mark.asyncio
async def test_permanent_failure(stub: StubChat) -> None:
    stub.reply = lambda body, index: (503, "unavailable")
    async with AsyncChatClient(endpoint(stub, max_retries=2)) as client:
        with raises(LlmTransportError) as e:
            await client.complete(messages)
    assert e.value.status == 503
    assert stub.request_count == 3


@mark.asyncio
async def test_client_errors_are_not_retried(stub: StubChat) -> None:
    stub.reply = lambda body, index: (401, "bad key")
    async with AsyncChatClient(endpoint(stub)) as client:
        with raises(LlmTransportError) as e:
            await client.complete(messages)
    assert e.value.status == 401
    assert "bad key" in e.value.body
    assert stub.request_count == 1


@mark.asyncio
async def test_unreachable_endpoint() -> None:
    cfg = EndpointConfig(base_url="http://127.0.0.1:9/v1", max_retries=1, backoff_factor=0.0, timeout_seconds=5)
    async with AsyncChatClient(cfg) as client:
        with raises(LlmTransportError) as e:
            await client.complete(messages)
        assert client.request_count == 2
    assert e.value.status is None
