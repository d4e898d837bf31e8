import asyncio
import logging
from types import TracebackType
from typing import Any, Dict, List, Optional, Type

import aiohttp
import backoff

from glpn.config import EndpointConfig
from glpn.http_client import AsyncHttpClient
from glpn.http_client.aiohttp_client import AioHttpClient
from glpn.models import GlpnError, JsObject
from glpn.prompts import ChatMessage

log = logging.getLogger(__name__)

CHAT_COMPLETIONS_PATH = "chat/completions"

# rate limiting and server side failures are worth another attempt
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class LlmTransportError(GlpnError):
    def __init__(self, status: Optional[int], body: str) -> None:
        super().__init__(f"chat endpoint failed (status {status}): {body[:200]}")
        self.status = status
        self.body = body


class RetryableResponseError(Exception):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"status {status}")
        self.status = status
        self.body = body


class AsyncChatClient:
    """
    Client for a chat-completion endpoint.

    Requests are sent with temperature fixed by the endpoint config. Rate limits, 5xx answers and
    connection failures are retried with exponential backoff; at most `concurrency` requests are in flight.
    """

    def __init__(self, endpoint: EndpointConfig, http_client: Optional[AsyncHttpClient] = None):
        self.endpoint = endpoint
        self.http_client = http_client or AioHttpClient(
            endpoint.base_url,
            api_key=endpoint.api_key,
            custom_ca_cert_path=endpoint.custom_ca_cert_path,
            timeout_seconds=endpoint.timeout_seconds,
        )
        self.semaphore = asyncio.Semaphore(endpoint.concurrency)
        self.__request_count = 0

    async def __aenter__(self) -> "AsyncChatClient":
        return self

    async def __aexit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        await self.shutdown()

    async def shutdown(self) -> None:
        await self.http_client.close()

    @property
    def request_count(self) -> int:
        """Number of HTTP requests sent so far, retries included."""
        return self.__request_count

    def _payload(self, messages: List[ChatMessage]) -> JsObject:
        return {
            "model": self.endpoint.model,
            "messages": [dict(m) for m in messages],
            "temperature": self.endpoint.temperature,
        }

    async def _send(self, payload: JsObject) -> str:
        self.__request_count += 1
        response = await self.http_client.post(CHAT_COMPLETIONS_PATH, json=payload)
        with response:
            if response.status_code in RETRYABLE_STATUS:
                raise RetryableResponseError(response.status_code, await response.text())
            if response.status_code != 200:
                raise LlmTransportError(response.status_code, await response.text())
            body: Any = await response.json()
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise LlmTransportError(200, f"unexpected response shape: {body}") from e
        if not isinstance(content, str):
            raise LlmTransportError(200, f"message content is not a string: {content!r}")
        return content

    def _log_backoff(self, details: Dict[str, Any]) -> None:
        log.debug(f"Chat request failed ({details.get('exception')}). Retry {details['tries']} in {details['wait']:.2f}s")

    async def complete(self, messages: List[ChatMessage]) -> str:
        """
        Send one chat request and return the text of the first choice.
        """
        payload = self._payload(messages)

        @backoff.on_exception(
            backoff.expo,
            (RetryableResponseError, aiohttp.ClientError, asyncio.TimeoutError),
            max_tries=self.endpoint.max_retries + 1,
            factor=self.endpoint.backoff_factor,
            max_value=self.endpoint.backoff_max,
            jitter=None,
            on_backoff=self._log_backoff,
            logger=None,
        )
        async def attempt() -> str:
            return await self._send(payload)

        async with self.semaphore:
            try:
                return await attempt()
            except RetryableResponseError as e:
                raise LlmTransportError(e.status, e.body) from e
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                raise LlmTransportError(None, str(e) or type(e).__name__) from e
