import logging
import ssl
from typing import Dict, Optional, Union

import aiohttp
import certifi
from multidict import CIMultiDict
from yarl import URL

from glpn.http_client import AsyncHttpClient, HttpResponse
from glpn.models import JsValue

log = logging.getLogger(__name__)


def ssl_context(custom_ca_cert_path: Optional[str] = None) -> ssl.SSLContext:
    """
    Server-auth context over the certifi bundle, extended by a custom CA certificate when given.
    """
    ctx = ssl.create_default_context(purpose=ssl.Purpose.SERVER_AUTH)
    ctx.load_verify_locations(cafile=certifi.where())
    if custom_ca_cert_path is not None:
        log.debug(f"Loading CA certificate from {custom_ca_cert_path}")
        ctx.load_verify_locations(cafile=custom_ca_cert_path)
    return ctx


class AioHttpClient(AsyncHttpClient):
    def __init__(
        self,
        url: str,
        *,
        api_key: Optional[str] = None,
        additional_headers: Optional[Dict[str, str]] = None,
        custom_ca_cert_path: Optional[str] = None,
        timeout_seconds: float = 60,
    ):
        self.session = aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=timeout_seconds))
        self.url = url
        self.api_key = api_key
        self.custom_ca_cert_path = custom_ca_cert_path
        self.additional_headers = additional_headers or {}
        self.__ssl_context: Optional[ssl.SSLContext] = None

    def _ssl_context(self) -> Union[ssl.SSLContext, bool]:
        # plain http needs no context; https verifies against certifi (plus the custom CA)
        if URL(self.url).scheme != "https":
            return True
        if self.__ssl_context is None:
            self.__ssl_context = ssl_context(self.custom_ca_cert_path)
        return self.__ssl_context

    async def close(self) -> None:
        await self.session.close()

    def _default_headers(self) -> CIMultiDict[str]:
        # default headers sent for every request
        default_headers = {
            "Content-type": "application/json",
            "Accept": "application/json",
        }
        if self.api_key:
            default_headers["Authorization"] = f"Bearer {self.api_key}"
        # set all user defined headers
        default_headers.update(self.additional_headers)
        return CIMultiDict(default_headers)

    def _url(self, path: str) -> URL:
        # the base url may carry a path prefix such as /v1
        return URL(self.url.rstrip("/") + "/" + path.lstrip("/"))

    async def post(
        self,
        path: str,
        json: Optional[JsValue] = None,
        headers: Optional[Dict[str, str]] = None,
    ) -> HttpResponse:
        """
        Make a POST request to the server.

        Args:
            path: The path to the resource, relative to the base url.
            json: The json body to send with the request.
            headers: The headers to add to the request.
        """
        request_headers = self._default_headers()
        request_headers.update(headers or {})
        resp = await self.session.post(
            self._url(path),
            ssl=self._ssl_context(),
            headers=request_headers,
            json=json,
            allow_redirects=False,
        )

        return HttpResponse(
            status_code=resp.status,
            headers=resp.headers,
            text=resp.text,
            json=resp.json,
            release=resp.release,
            underlying=resp,
        )
