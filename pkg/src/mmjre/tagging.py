"""Word-pair relation tagging.

A sentence of ``n`` tokens is labelled by an ``n x n`` grid of tag ids.
Tag 0 is ``N``; then come the entity types, then the relation types.

* every cell inside an entity's square block ``span x span`` carries the
  entity type;
* for a related pair whose first entity ``e1`` precedes ``e2``, every cell
  ``(i, j)`` with ``i`` in ``e2`` and ``j`` in ``e1`` carries the relation.

Relation cells therefore always sit below the diagonal, and the cell just
above the diagonal tells whether two neighbouring tokens share an entity.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .encoder import softmax, uniform_bias, uniform_init
from .errors import ConfigError, EncodingError, InputError, ShapeError
from .graphs import LabelVocabulary

Span = tuple[int, int]


@dataclass(frozen=True, order=True)
class Quintuple:
    e1: Span
    t1: str
    e2: Span
    t2: str
    r: str

    def __post_init__(self):
        for span in (self.e1, self.e2):
            if len(span) != 2 or span[0] > span[1] or span[0] < 0:
                raise InputError(f"invalid span {span}")
        if self.e1 == self.e2:
            raise InputError(f"entities of a quintuple must differ: {self.e1}")
        if not (self.e1[1] < self.e2[0] or self.e2[1] < self.e1[0]):
            raise InputError(f"spans {self.e1} and {self.e2} overlap")

    def canonical(self) -> "Quintuple":
        """Order the two entities by position in the sentence."""
        if self.e1[0] <= self.e2[0]:
            return self
        return Quintuple(self.e2, self.t2, self.e1, self.t1, self.r)

    def as_list(self) -> list:
        return [self.e1[0], self.e1[1], self.t1, self.e2[0], self.e2[1], self.t2, self.r]

    @classmethod
    def from_list(cls, item: Sequence) -> "Quintuple":
        if len(item) != 7:
            raise InputError(f"quintuple needs 7 fields, got {len(item)}: {item!r}")
        s1, e1, t1, s2, e2, t2, r = item
        return cls((int(s1), int(e1)), str(t1), (int(s2), int(e2)), str(t2), str(r))


class TagVocabulary:
    def __init__(self, entity_types: Sequence[str], relation_types: Sequence[str]):
        self.entity_types = tuple(entity_types)
        self.relation_types = tuple(relation_types)
        self.names = ("N",) + self.entity_types + self.relation_types
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"tag names must be unique: {self.names}")
        self.index = {name: i for i, name in enumerate(self.names)}

    @classmethod
    def from_labels(cls, vocab: LabelVocabulary) -> "TagVocabulary":
        return cls(vocab.entity_types, vocab.relation_types)

    def __len__(self) -> int:
        return len(self.names)

    def id(self, name: str, kind: str) -> int:
        pool = self.entity_types if kind == "entity" else self.relation_types
        if name not in pool:
            raise EncodingError(f"unknown {kind} type {name!r}")
        return self.index[name]

    def is_entity(self, tag: int) -> bool:
        return 1 <= tag <= len(self.entity_types)

    def is_relation(self, tag: int) -> bool:
        return len(self.entity_types) < tag < len(self.names)


@dataclass(frozen=True)
class TagGrid:
    cells: np.ndarray  # (n, n) int
    vocab: TagVocabulary

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def names(self) -> np.ndarray:
        return np.array(self.vocab.names, dtype=object)[self.cells]


def encode_quintuples(quints: Iterable[Quintuple], n: int, vocab: TagVocabulary) -> TagGrid:
    quints = sorted({q.canonical() for q in quints})
    spans: dict[Span, str] = {}
    for q in quints:
        for span, t in ((q.e1, q.t1), (q.e2, q.t2)):
            if span[1] >= n:
                raise EncodingError(f"span {span} outside sentence of length {n}")
            if spans.setdefault(span, t) != t:
                raise EncodingError(f"span {span} typed both {spans[span]!r} and {t!r}")
    ordered = sorted(spans)
    for a, b in zip(ordered, ordered[1:]):
        if b[0] <= a[1]:
            raise EncodingError(f"spans {a} and {b} partially overlap")

    cells = np.zeros((n, n), dtype=np.int64)

    def put(i, j, tag):
        if cells[i, j] not in (0, tag):
            raise EncodingError(
                f"cell ({i}, {j}) tagged both {vocab.names[cells[i, j]]!r} and {vocab.names[tag]!r}")
        cells[i, j] = tag

    for (s, e), t in spans.items():
        tag = vocab.id(t, "entity")
        cells[s:e + 1, s:e + 1] = tag
    for q in quints:
        tag = vocab.id(q.r, "relation")
        for i in range(q.e2[0], q.e2[1] + 1):
            for j in range(q.e1[0], q.e1[1] + 1):
                put(i, j, tag)
    return TagGrid(cells, vocab)


def entity_spans(grid: TagGrid) -> list[tuple[Span, str]]:
    """Runs of diagonal cells with one entity type, linked through the cell above the diagonal."""
    cells, vocab = grid.cells, grid.vocab
    out = []
    start = None
    for i in range(grid.n + 1):
        tag = cells[i, i] if i < grid.n else 0
        if start is not None:
            prev = cells[i - 1, i - 1]
            if tag == prev and cells[i - 1, i] == prev:
                continue
            out.append(((start, i - 1), vocab.names[prev]))
            start = None
        if i < grid.n and vocab.is_entity(tag):
            start = i
    return out


def decode_grid(grid: TagGrid) -> list[Quintuple]:
    cells, vocab = grid.cells, grid.vocab
    spans = entity_spans(grid)
    out = []
    for a in range(len(spans)):
        (s1, e1), t1 = spans[a]
        for b in range(a + 1, len(spans)):
            (s2, e2), t2 = spans[b]
            block = cells[s2:e2 + 1, s1:e1 + 1].ravel()
            votes = Counter(int(t) for t in block if vocab.is_relation(int(t)))
            if not votes:
                continue
            top = max(votes.values())
            rel = min(t for t, c in votes.items() if c == top)
            out.append(Quintuple((s1, e1), t1, (s2, e2), t2, vocab.names[rel]))
    out.sort(key=lambda q: (q.e1[0], q.e2[0], vocab.index[q.r]))
    return out


# ---------------------------------------------------------------------------
# prediction head


@dataclass
class PredictionHead:
    W_p: np.ndarray  # (d_y, 2 d_T)
    b_p: np.ndarray  # (d_y,)

    @classmethod
    def init(cls, d_T: int, d_y: int, rng: np.random.Generator) -> "PredictionHead":
        return cls(uniform_init(rng, d_y, 2 * d_T), uniform_bias(rng, d_y, 2 * d_T))

    @property
    def d_y(self) -> int:
        return self.W_p.shape[0]

    def copy(self) -> "PredictionHead":
        return PredictionHead(self.W_p.copy(), self.b_p.copy())


def grid_logits(S, head: PredictionHead) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    n, d = S.shape
    if head.W_p.shape[1] != 2 * d:
        raise ShapeError(f"head expects pair width {head.W_p.shape[1]}, got 2*{d}")
    left = S @ head.W_p[:, :d].T
    right = S @ head.W_p[:, d:].T
    return left[:, None, :] + right[None, :, :] + head.b_p


def predict_grid(S, head: PredictionHead) -> np.ndarray:
    """Tag distribution for every word pair ``(i, j)`` from ``[S_i; S_j]``; shape (n, n, d_y)."""
    return softmax(grid_logits(S, head), axis=-1)


def argmax_grid(probs: np.ndarray, vocab: TagVocabulary) -> TagGrid:
    return TagGrid(np.argmax(probs, axis=-1).astype(np.int64), vocab)


def _gold_cells(gold) -> np.ndarray:
    return gold.cells if isinstance(gold, TagGrid) else np.asarray(gold, dtype=np.int64)


def main_loss(probs, gold) -> float:
    """Summed cross-entropy over all n*n cells."""
    probs = np.asarray(probs, dtype=np.float64)
    cells = _gold_cells(gold)
    if probs.shape[:2] != cells.shape:
        raise ShapeError(f"probabilities {probs.shape} do not match gold grid {cells.shape}")
    picked = np.take_along_axis(probs, cells[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return float(-np.sum(np.log(picked)))


def main_loss_from_logits(logits, gold) -> float:
    """Same value as :func:`main_loss` without forming probabilities first."""
    cells = _gold_cells(gold)
    m = logits.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))[..., 0]
    picked = np.take_along_axis(logits, cells[..., None], axis=-1)[..., 0]
    return float(np.sum(lse - picked))


def joint_loss(l_main: float, l_graph: float, lam: float) -> float:
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0 (got {lam})")
    return l_main + lam * l_graph


def head_gradients(S, gold, head: PredictionHead) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the summed cross-entropy with respect to ``W_p`` and ``b_p``."""
    S = np.asarray(S, dtype=np.float64)
    cells = _gold_cells(gold)
    delta = predict_grid(S, head)
    n = S.shape[0]
    if cells.shape != (n, n):
        raise ShapeError(f"gold grid {cells.shape} does not match n={n}")
    ii, jj = np.indices((n, n))
    delta[ii, jj, cells] -= 1.0
    grad_left = np.einsum("ijy,id->yd", delta, S)
    grad_right = np.einsum("ijy,jd->yd", delta, S)
    return np.concatenate([grad_left, grad_right], axis=1), delta.sum(axis=(0, 1))


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Counts:
    correct: int = 0
    predicted: int = 0
    gold: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.correct + other.correct, self.predicted + other.predicted,
                      self.gold + other.gold)

    def prf(self) -> tuple[float, float, float]:
        p = self.correct / self.predicted if self.predicted else 0.0
        r = self.correct / self.gold if self.gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f


def match_counts(pred: Iterable[Quintuple], gold: Iterable[Quintuple]) -> Counts:
    p = {q.canonical() for q in pred}
    g = {q.canonical() for q in gold}
    return Counts(len(p & g), len(p), len(g))


def evaluate(pred: Iterable[Quintuple], gold: Iterable[Quintuple]) -> tuple[float, float, float]:
    """Exact-match precision, recall and F1 over quintuples."""
    return match_counts(pred, gold).prf()


def metrics_report(p: float, r: float, f: float) -> str:
    return f"precision={p:.4f}\nrecall={r:.4f}\nf1={f:.4f}\n"


# ---------------------------------------------------------------------------
# quintuple files: one JSON object per line, {"id": ..., "quintuples": [[s1, e1, t1, s2, e2, t2, r], ...]}


def write_quintuples(path, records: Iterable[tuple[str, Sequence[Quintuple]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, quints in records:
            fh.write(json.dumps({"id": rid, "quintuples": [q.as_list() for q in quints]}) + "\n")


def read_quintuples(path) -> dict[str, list[Quintuple]]:
    out: dict[str, list[Quintuple]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rid = str(rec["id"])
                out[rid] = [Quintuple.from_list(item) for item in rec["quintuples"]]
            except (json.JSONDecodeError, KeyError, TypeError, InputError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return out
