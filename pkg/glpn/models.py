from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List, Optional, Mapping, Union, Dict, Any, FrozenSet, Tuple

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

JsValue = Union[None, int, str, float, bool, List[Any], Dict[str, Any]]
JsObject = Dict[str, JsValue]

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

# binary task: class 0 is fake, class 1 is real
NUM_CLASSES = 2
FAKE = 0
REAL = 1


class GlpnError(Exception):
    """Base class of every error raised by this package."""


class Split(Enum):
    train = "train"
    test = "test"


@dataclass(frozen=True, eq=False)
class NewsRecord:
    id: str
    split: Split
    label: Optional[int]
    text_embedding: FloatArray
    image_embedding: FloatArray
    text: Optional[str] = None

    def same_as(self, other: "NewsRecord") -> bool:
        return (
            self.id == other.id
            and self.split == other.split
            and self.label == other.label
            and self.text == other.text
            and np.array_equal(self.text_embedding, other.text_embedding)
            and np.array_equal(self.image_embedding, other.image_embedding)
        )


@dataclass(eq=False)
class Dataset:
    """
    Validated, ordered collection of records.

    The record order is the node order of every downstream structure: node i is records[i].
    """

    records: List[NewsRecord]
    d_t: int
    d_v: int
    n_train: int
    n_test: int

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return len(self.records)

    @cached_property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    @cached_property
    def index(self) -> Dict[str, int]:
        return {rid: i for i, rid in enumerate(self.ids)}

    @cached_property
    def text_matrix(self) -> FloatArray:
        return np.vstack([r.text_embedding for r in self.records]).astype(np.float64)

    @cached_property
    def image_matrix(self) -> FloatArray:
        return np.vstack([r.image_embedding for r in self.records]).astype(np.float64)

    @cached_property
    def features(self) -> FloatArray:
        # x_i = t_i ⊕ v_i
        return np.hstack([self.text_matrix, self.image_matrix])

    @cached_property
    def train_mask(self) -> BoolArray:
        return np.array([r.split == Split.train for r in self.records], dtype=np.bool_)

    @cached_property
    def test_mask(self) -> BoolArray:
        return ~self.train_mask

    @cached_property
    def train_indices(self) -> IntArray:
        return np.flatnonzero(self.train_mask).astype(np.int64)

    @cached_property
    def test_indices(self) -> IntArray:
        return np.flatnonzero(self.test_mask).astype(np.int64)

    @cached_property
    def truth(self) -> IntArray:
        """Labels per node, -1 where absent. Test labels are held out: only evaluation reads them."""
        return np.array([-1 if r.label is None else r.label for r in self.records], dtype=np.int64)

    def same_as(self, other: "Dataset") -> bool:
        return (
            (self.d_t, self.d_v, self.n_train, self.n_test) == (other.d_t, other.d_v, other.n_train, other.n_test)
            and len(self.records) == len(other.records)
            and all(a.same_as(b) for a, b in zip(self.records, other.records))
        )


@dataclass(frozen=True)
class SynthConfig:
    n_per_class_train: int = 140
    n_per_class_test: int = 60
    d_t: int = 16
    d_v: int = 16
    class_separation: float = 0.18
    noise_sigma: float = 0.03
    modality_correlation: float = 0.8
    seed: int = 0
    # records per story; members of one story are near duplicates sharing a class
    story_size: int = 4
    story_spread: float = 0.18


class SimilarityKind(Enum):
    ConcatConcat = "ConcatConcat"
    ImageToText = "ImageToText"
    TextToImage = "TextToImage"
    ImageToImage = "ImageToImage"
    TextToText = "TextToText"


Edge = Tuple[int, int]


@dataclass(frozen=True)
class SimilarityCheck:
    kind: SimilarityKind
    score: float


@dataclass
class CrossModalGraph:
    n: int
    theta: float
    # i < j for every key; each value lists the checks that exceeded theta
    edges: Dict[Edge, List[SimilarityCheck]] = field(default_factory=dict)

    @property
    def edge_set(self) -> FrozenSet[Edge]:
        return frozenset(self.edges.keys())

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency without self loops."""
        if self.edges:
            ij = np.array(sorted(self.edges.keys()), dtype=np.int64)
            rows = np.concatenate([ij[:, 0], ij[:, 1]])
            cols = np.concatenate([ij[:, 1], ij[:, 0]])
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    n: int
    # D̃^{-1/2}(A + I)D̃^{-1/2}, symmetric, immutable after construction
    matrix: sp.csr_matrix

    def __matmul__(self, other: FloatArray) -> FloatArray:
        return np.asarray(self.matrix @ other, dtype=np.float64)

    def dense(self) -> FloatArray:
        return np.asarray(self.matrix.toarray(), dtype=np.float64)


class PromptStyle(Enum):
    Detailed = "detailed"
    Simple = "simple"


@dataclass(frozen=True)
class PromptTemplate:
    style: PromptStyle
    system_text: str
    few_shot_turns: Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class LlmVerdict:
    pred: int
    confidence: float
    reason: Optional[str]
    raw: str


class VerdictSource(Enum):
    Live = "live"
    Fixture = "fixture"
    Oracle = "oracle"
    File = "file"


@dataclass
class PseudoLabelSet:
    verdicts: Mapping[str, LlmVerdict]
    source: VerdictSource

    def __len__(self) -> int:
        return len(self.verdicts)


class Provenance(Enum):
    Truth = "truth"
    Pseudo = "pseudo"
    Absent = "none"


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    # n × C matrix: one-hot truth, one-hot pseudo, or zero rows
    vectors: FloatArray
    provenance: Tuple[Provenance, ...]

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.vectors.shape[1])

    @cached_property
    def truth_mask(self) -> BoolArray:
        return np.array([p == Provenance.Truth for p in self.provenance], dtype=np.bool_)

    @cached_property
    def targets(self) -> IntArray:
        """Class of every Truth row, -1 elsewhere."""
        return np.where(self.truth_mask, np.argmax(self.vectors, axis=1), -1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class MaskPlan:
    epoch_seed: int
    rho: float
    masked: IntArray
    # 0 where masked, 1 otherwise
    m: FloatArray

    @cached_property
    def masked_mask(self) -> BoolArray:
        return self.m == 0.0
