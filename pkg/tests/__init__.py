"""Test suite for the glpn package."""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from aiohttp import web
from aiohttp.test_utils import TestServer

from glpn.dataset import dataset_from_records
from glpn.graph import normalize
from glpn.models import (
    CrossModalGraph,
    Dataset,
    JsObject,
    LlmVerdict,
    NewsRecord,
    NormalizedAdjacency,
    PseudoLabelSet,
    SimilarityCheck,
    SimilarityKind,
    Split,
    SynthConfig,
    VerdictSource,
)


def record(
    rid: str,
    split: Split = Split.train,
    label: Optional[int] = 0,
    text: Sequence[float] = (1.0, 0.0),
    image: Sequence[float] = (0.0, 1.0),
    content: Optional[str] = "Some news text.",
) -> NewsRecord:
    return NewsRecord(
        id=rid,
        split=split,
        label=label,
        text_embedding=np.array(text, dtype=np.float64),
        image_embedding=np.array(image, dtype=np.float64),
        text=content,
    )


def random_dataset(n: int, d_t: int = 3, d_v: int = 3, n_train: Optional[int] = None, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    n_train = n // 2 if n_train is None else n_train
    records = [
        record(
            f"r{i:03d}",
            split=Split.train if i < n_train else Split.test,
            label=int(rng.integers(0, 2)),
            text=rng.standard_normal(d_t),
            image=rng.standard_normal(d_v),
            content=f"news item {i}",
        )
        for i in range(n)
    ]
    return dataset_from_records(records)


def graph_of(n: int, edges: Sequence[Tuple[int, int]], theta: float = 0.95) -> CrossModalGraph:
    checks = {(min(i, j), max(i, j)): [SimilarityCheck(SimilarityKind.TextToText, 1.0)] for i, j in edges}
    return CrossModalGraph(n=n, theta=theta, edges=checks)


def adjacency_of(n: int, edges: Sequence[Tuple[int, int]]) -> NormalizedAdjacency:
    return normalize(graph_of(n, edges))


def verdict(pred: int, confidence: float, reason: Optional[str] = None) -> LlmVerdict:
    return LlmVerdict(pred=pred, confidence=confidence, reason=reason, raw=f"Result: {pred}, Confidence: {confidence * 100:g}%")


def pseudo_set(items: Sequence[Tuple[str, int, float]], source: VerdictSource = VerdictSource.Oracle) -> PseudoLabelSet:
    return PseudoLabelSet(verdicts={rid: verdict(pred, conf) for rid, pred, conf in items}, source=source)


def dense_normalized(n: int, edges: Sequence[Tuple[int, int]]) -> np.ndarray:  # type: ignore
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    return d @ a @ d  # type: ignore


# small and quick: 4 stories per class in each split, no edges between stories
small_synth = SynthConfig(
    n_per_class_train=16, n_per_class_test=8, class_separation=0.25, noise_sigma=0.03, story_spread=0.18, seed=3
)


def held_out_ids(ds: Dataset) -> List[str]:
    return [ds.records[int(i)].id for i in ds.test_indices]


Reply = Callable[[JsObject, int], Tuple[int, str]]


class StubChat:
    """A chat-completion endpoint answering with `reply(request body, request index)`."""

    def __init__(self, reply: Optional[Reply] = None) -> None:
        self.reply: Reply = reply or (lambda body, index: (200, "Result: 1, Confidence: 80%"))
        self.bodies: List[JsObject] = []
        self.headers: List[Dict[str, str]] = []
        self.server: Optional[TestServer] = None
        self.base_url = ""

    async def handle(self, request: web.Request) -> web.Response:
        body = await request.json()
        self.bodies.append(body)
        self.headers.append(dict(request.headers))
        status, content = self.reply(body, len(self.bodies) - 1)
        if status != 200:
            return web.Response(status=status, text=content)
        return web.json_response({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})

    async def start(self) -> str:
        app = web.Application()
        app.router.add_post("/v1/chat/completions", self.handle)
        self.server = TestServer(app)
        await self.server.start_server()
        self.base_url = str(self.server.make_url("/v1"))
        return self.base_url

    async def stop(self) -> None:
        if self.server is not None:
            await self.server.close()

    @property
    def request_count(self) -> int:
        return len(self.bodies)


def user_text(body: JsObject) -> str:
    return str(body["messages"][-1]["content"])  # type: ignore
