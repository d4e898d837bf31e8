import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from glpn.json_utils import JsonLinesError, PathLike, read_jsonl, write_jsonl
from glpn.models import (
    CrossModalGraph,
    Dataset,
    Edge,
    FloatArray,
    GlpnError,
    JsValue,
    NewsRecord,
    NormalizedAdjacency,
    SimilarityCheck,
    SimilarityKind,
    Split,
)

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.95


class DimensionMismatchError(GlpnError):
    def __init__(self, left: int, right: int) -> None:
        super().__init__(f"vectors have different dimensions: {left} != {right}")
        self.left = left
        self.right = right


class ZeroVectorError(GlpnError):
    pass


class GraphFileError(GlpnError):
    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


def cosine(a: FloatArray, b: FloatArray) -> float:
    if a.shape != b.shape:
        raise DimensionMismatchError(int(a.size), int(b.size))
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for the zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pair_similarities(r_i: NewsRecord, r_j: NewsRecord) -> Dict[SimilarityKind, float]:
    """
    Compute every similarity kind defined for the pair.

    ImageToText compares the image of r_i with the text of r_j and TextToImage the other way round.
    Both cross-modal kinds are absent from the result when the text and image dimensions differ.
    """
    scores = {
        SimilarityKind.ConcatConcat: cosine(
            np.concatenate([r_i.text_embedding, r_i.image_embedding]),
            np.concatenate([r_j.text_embedding, r_j.image_embedding]),
        ),
        SimilarityKind.TextToText: cosine(r_i.text_embedding, r_j.text_embedding),
        SimilarityKind.ImageToImage: cosine(r_i.image_embedding, r_j.image_embedding),
    }
    if r_i.text_embedding.shape == r_j.image_embedding.shape and r_i.image_embedding.shape == r_j.text_embedding.shape:
        scores[SimilarityKind.ImageToText] = cosine(r_i.image_embedding, r_j.text_embedding)
        scores[SimilarityKind.TextToImage] = cosine(r_i.text_embedding, r_j.image_embedding)
    return {kind: scores[kind] for kind in SimilarityKind if kind in scores}


def _unit(m: FloatArray) -> FloatArray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cosine similarity is undefined for the zero vector")
    return m / norms


def _kind_operands(ds: Dataset) -> List[Tuple[SimilarityKind, FloatArray, FloatArray]]:
    text = _unit(ds.text_matrix)
    image = _unit(ds.image_matrix)
    concat = _unit(ds.features)
    operands = [(SimilarityKind.ConcatConcat, concat, concat)]
    if ds.d_t == ds.d_v:
        # row i is the left record of the pair, column j the right one
        operands.append((SimilarityKind.ImageToText, image, text))
        operands.append((SimilarityKind.TextToImage, text, image))
    else:
        log.info(f"d_t={ds.d_t} differs from d_v={ds.d_v}: cross-modal similarity kinds are skipped")
    operands.append((SimilarityKind.ImageToImage, image, image))
    operands.append((SimilarityKind.TextToText, text, text))
    return operands


def _block_edges(
    operands: List[Tuple[SimilarityKind, FloatArray, FloatArray]], theta: float, start: int, stop: int
) -> List[Tuple[Edge, List[SimilarityCheck]]]:
    scores = [(kind, np.clip(left[start:stop] @ right.T, -1.0, 1.0)) for kind, left, right in operands]
    exceed = np.zeros_like(scores[0][1], dtype=np.bool_)
    for _, s in scores:
        exceed |= s > theta
    rows, cols = np.nonzero(exceed)
    upper = cols > rows + start
    found: List[Tuple[Edge, List[SimilarityCheck]]] = []
    for r, c in zip(rows[upper].tolist(), cols[upper].tolist()):
        checks = [SimilarityCheck(kind, float(s[r, c])) for kind, s in scores if s[r, c] > theta]
        found.append(((start + r, c), checks))
    return found


def build_graph(ds: Dataset, theta: float = DEFAULT_THETA, block_size: int = 1024, workers: int = 1) -> CrossModalGraph:
    """
    Build the cross-modal graph over all records of the dataset.

    An edge {i, j} exists iff any computed similarity kind strictly exceeds theta.
    Similarities are computed in row blocks of `block_size`, so memory stays O(block_size * N)
    while the time is O(N^2 * (d_t + d_v)). Blocks may run on `workers` threads; they are merged
    in block order, so the result does not depend on the thread count.
    """
    if not -1.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (-1, 1], got {theta}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    operands = _kind_operands(ds)
    n = ds.n
    bounds = [(start, min(start + block_size, n)) for start in range(0, n, block_size)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda b: _block_edges(operands, theta, b[0], b[1]), bounds))
    else:
        blocks = [_block_edges(operands, theta, start, stop) for start, stop in bounds]
    edges: Dict[Edge, List[SimilarityCheck]] = {}
    for block in blocks:
        edges.update(block)
    graph = CrossModalGraph(n=n, theta=theta, edges=edges)
    stats = graph_stats(graph, ds)
    log.info(
        f"Built graph over {n} nodes with theta={theta}: {stats.edge_count} edges, "
        f"{stats.isolated} isolated nodes, train homophily {stats.homophily}"
    )
    log.debug(f"Edges per similarity kind: {stats.per_kind}")
    return graph


def normalize(g: CrossModalGraph) -> NormalizedAdjacency:
    """
    Â = D̃^{-1/2}(A + I)D̃^{-1/2} with D̃ the degree matrix of A + I.
    """
    a_tilde = (g.adjacency() + sp.identity(g.n, format="csr", dtype=np.float64)).tocoo()
    degree = np.asarray(a_tilde.sum(axis=1), dtype=np.float64).ravel()
    d = 1.0 / np.sqrt(degree)
    # d[i] * d[j] == d[j] * d[i] exactly, so the result is exactly symmetric
    data = d[a_tilde.row] * d[a_tilde.col]
    matrix = sp.csr_matrix((data, (a_tilde.row, a_tilde.col)), shape=(g.n, g.n))
    matrix.sort_indices()
    return NormalizedAdjacency(n=g.n, matrix=matrix)


@dataclass
class GraphStats:
    n: int
    edge_count: int
    isolated: int
    per_kind: Dict[str, int] = field(default_factory=dict)
    # share of edges between two labeled nodes that join the same class
    homophily: Optional[float] = None


def edge_homophily(g: CrossModalGraph, ds: Dataset, include_test: bool = False) -> Optional[float]:
    """
    Fraction of edges joining two labeled nodes of the same class, None without such edges.
    Only train labels are used unless include_test is set.
    """
    usable = [
        r.label is not None and (include_test or r.split == Split.train) for r in ds.records
    ]
    truth = ds.truth
    same = total = 0
    for i, j in g.edges:
        if usable[i] and usable[j]:
            total += 1
            same += int(truth[i] == truth[j])
    return same / total if total else None


def graph_stats(g: CrossModalGraph, ds: Optional[Dataset] = None) -> GraphStats:
    degree = np.zeros(g.n, dtype=np.int64)
    per_kind = {kind.value: 0 for kind in SimilarityKind}
    for (i, j), checks in g.edges.items():
        degree[i] += 1
        degree[j] += 1
        for check in checks:
            per_kind[check.kind.value] += 1
    return GraphStats(
        n=g.n,
        edge_count=len(g.edges),
        isolated=int(np.count_nonzero(degree == 0)),
        per_kind=per_kind,
        homophily=edge_homophily(g, ds) if ds is not None else None,
    )


def save_graph(g: CrossModalGraph, path: PathLike) -> None:
    rows: List[JsValue] = [{"n": g.n, "theta": g.theta}]
    for (i, j), checks in sorted(g.edges.items()):
        rows.append({"i": i, "j": j, "kinds": [{"kind": c.kind.value, "score": c.score} for c in checks]})
    write_jsonl(path, rows)


def load_graph(path: PathLike) -> CrossModalGraph:
    edges: Dict[Edge, List[SimilarityCheck]] = {}
    n: Optional[int] = None
    theta = DEFAULT_THETA
    try:
        for line, obj in read_jsonl(path):
            if n is None:
                if not isinstance(obj.get("n"), int) or not isinstance(obj.get("theta"), (int, float)):
                    raise GraphFileError(str(path), line, "header must carry integer 'n' and numeric 'theta'")
                n = int(obj["n"])  # type: ignore
                theta = float(obj["theta"])  # type: ignore
                continue
            i, j, kinds = obj.get("i"), obj.get("j"), obj.get("kinds")
            if not isinstance(i, int) or not isinstance(j, int) or not 0 <= i < j < n:
                raise GraphFileError(str(path), line, "edge must satisfy 0 <= i < j < n")
            if not isinstance(kinds, list) or not kinds:
                raise GraphFileError(str(path), line, "edge must list the exceeding similarity kinds")
            checks: List[SimilarityCheck] = []
            for entry in kinds:  # type: ignore
                try:
                    check = SimilarityCheck(SimilarityKind(entry["kind"]), float(entry["score"]))  # type: ignore
                except (KeyError, TypeError, ValueError) as e:
                    raise GraphFileError(str(path), line, f"malformed similarity check: {e}") from e
                if not check.score > theta:
                    raise GraphFileError(str(path), line, f"score {check.score} does not exceed theta {theta}")
                checks.append(check)
            edges[(i, j)] = checks
    except JsonLinesError as e:
        raise GraphFileError(str(path), e.line, e.reason) from e
    if n is None:
        raise GraphFileError(str(path), 0, "missing header line")
    log.info(f"Loaded graph with {len(edges)} edges over {n} nodes from {path}")
    return CrossModalGraph(n=n, theta=theta, edges=edges)
