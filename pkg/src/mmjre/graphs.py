"""Sentence and scene-graph ingestion, graph construction, node/edge embeddings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, ShapeError

DEFAULT_ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")
SELF_LABEL = "SELF"
MAX_TOKENS = 70
MAX_OBJECTS = 10


@dataclass(frozen=True)
class TokenizedSentence:
    tokens: tuple[str, ...]
    pos_tags: tuple[str, ...]
    dep_heads: tuple[int, ...]
    dep_labels: tuple[str, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if not (len(self.pos_tags) == len(self.dep_heads) == len(self.dep_labels) == n):
            raise InputError(
                "length mismatch: tokens=%d pos=%d heads=%d labels=%d"
                % (n, len(self.pos_tags), len(self.dep_heads), len(self.dep_labels))
            )
        if n == 0:
            raise InputError("empty sentence")
        for h in self.dep_heads:
            if not 0 <= h < n:
                raise InputError(f"head index {h} out of range [0, {n})")
        roots = [i for i, h in enumerate(self.dep_heads) if h == i]
        if len(roots) != 1:
            raise InputError("multiple roots" if roots else "no root")
        # every token must reach the root by following heads
        for i in range(n):
            seen = 0
            j = i
            while self.dep_heads[j] != j:
                j = self.dep_heads[j]
                seen += 1
                if seen > n:
                    raise InputError(f"dependency cycle through token {i}")

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def root(self) -> int:
        return next(i for i, h in enumerate(self.dep_heads) if h == i)


@dataclass(frozen=True)
class TextualGraph:
    n: int
    adjacency: np.ndarray  # (n, n) int8, symmetric, unit diagonal
    edge_labels: np.ndarray  # (n, n) object; None where adjacency is 0


@dataclass(frozen=True)
class VisualGraph:
    k: int
    object_labels: tuple[str, ...]
    object_scores: tuple[float, ...]
    adjacency: np.ndarray
    edge_labels: np.ndarray


@dataclass(frozen=True)
class LabelVocabulary:
    entity_types: tuple[str, ...] = DEFAULT_ENTITY_TYPES
    relation_types: tuple[str, ...] = ()
    dependency_labels: tuple[str, ...] = ()
    pos_labels: tuple[str, ...] = ()
    visual_relation_labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("entity_types", "relation_types", "dependency_labels",
                     "pos_labels", "visual_relation_labels"):
            values = getattr(self, name)
            if len(set(values)) != len(values):
                raise InputError(f"duplicate names in {name}")
        if "N" in self.entity_types or "N" in self.relation_types:
            raise InputError("'N' is reserved for the no-relation tag")
        clash = set(self.entity_types) & set(self.relation_types)
        if clash:
            raise InputError(f"names used as both entity and relation types: {sorted(clash)}")

    @property
    def tag_names(self) -> tuple[str, ...]:
        return ("N",) + tuple(self.entity_types) + tuple(self.relation_types)


_VOCAB_SECTIONS = ("entity_types", "relation_types", "dependency_labels",
                   "pos_labels", "visual_relation_labels")


def load_vocabulary(path) -> LabelVocabulary:
    """Read a sectioned plain-text vocabulary.

    Sections are introduced by ``[name]`` lines; every other non-blank line
    is one label. Lines starting with ``#`` are comments.
    """
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _VOCAB_SECTIONS:
                raise InputError(f"{path}:{lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise InputError(f"{path}:{lineno}: label outside of a section")
        sections[current].append(line)
    kwargs = {k: tuple(v) for k, v in sections.items()}
    return LabelVocabulary(**kwargs)


def save_vocabulary(vocab: LabelVocabulary, path) -> None:
    lines = []
    for name in _VOCAB_SECTIONS:
        lines.append(f"[{name}]")
        lines.extend(getattr(vocab, name))
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# sentences


def sentence_from_record(rec: Mapping) -> TokenizedSentence:
    missing = [f for f in ("tokens", "pos", "heads", "dep_labels") if f not in rec]
    if missing:
        raise InputError(f"missing field(s): {', '.join(missing)}")
    return TokenizedSentence(
        tokens=tuple(str(t) for t in rec["tokens"]),
        pos_tags=tuple(str(p) for p in rec["pos"]),
        dep_heads=tuple(int(h) for h in rec["heads"]),
        dep_labels=tuple(str(d) for d in rec["dep_labels"]),
    )


def iter_records(path) -> Iterable[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for each non-blank JSON line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise InputError(f"{path}:{lineno}: record is not an object")
            yield lineno, rec


def load_sentences(path, max_tokens: int = MAX_TOKENS) -> list[TokenizedSentence]:
    out = []
    for lineno, rec in iter_records(path):
        try:
            s = sentence_from_record(rec)
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
        if s.n > max_tokens:
            raise InputError(
                f"{path}:{lineno}: record {rec.get('id', '?')!r} has {s.n} tokens "
                f"(max_tokens={max_tokens})"
            )
        out.append(s)
    return out


def build_textual_graph(s: TokenizedSentence) -> TextualGraph:
    n = s.n
    adj = np.eye(n, dtype=np.int8)
    labels = np.full((n, n), None, dtype=object)
    for i in range(n):
        labels[i, i] = SELF_LABEL
    for i, h in enumerate(s.dep_heads):
        if h == i:
            continue
        adj[i, h] = adj[h, i] = 1
        labels[i, h] = labels[h, i] = s.dep_labels[i]
    return TextualGraph(n=n, adjacency=adj, edge_labels=labels)


# ---------------------------------------------------------------------------
# scene graphs


def parse_scene_graph(data: Mapping, k_max: int = MAX_OBJECTS) -> VisualGraph:
    objects = data.get("objects")
    if not objects:
        raise InputError("empty scene graph")
    labels, scores = [], []
    for idx, obj in enumerate(objects):
        try:
            label, score = str(obj["label"]), float(obj["score"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"object {idx}: expected {{label, score}}") from None
        if not 0.0 <= score <= 1.0:
            raise InputError(f"object {idx}: score {score} outside [0, 1]")
        labels.append(label)
        scores.append(score)
    total = len(objects)
    triples = []
    for t in data.get("relations", []):
        try:
            s, rel, o = int(t[0]), str(t[1]), int(t[2])
        except (IndexError, TypeError, ValueError):
            raise InputError(f"malformed relation triple {t!r}") from None
        if not (0 <= s < total and 0 <= o < total):
            raise InputError(f"relation triple {t!r} references an object outside [0, {total})")
        triples.append((s, rel, o))

    # stable sort: equal scores keep file order
    order = sorted(range(total), key=lambda i: -scores[i])[:k_max]
    remap = {old: new for new, old in enumerate(order)}
    k = len(order)
    adj = np.eye(k, dtype=np.int8)
    elabels = np.full((k, k), None, dtype=object)
    for i in range(k):
        elabels[i, i] = SELF_LABEL
    for s, rel, o in triples:
        if s not in remap or o not in remap or s == o:
            continue
        a, b = remap[s], remap[o]
        if adj[a, b]:
            continue  # first triple on a pair wins
        adj[a, b] = adj[b, a] = 1
        elabels[a, b] = elabels[b, a] = rel
    return VisualGraph(
        k=k,
        object_labels=tuple(labels[i] for i in order),
        object_scores=tuple(scores[i] for i in order),
        adjacency=adj,
        edge_labels=elabels,
    )


def load_scene_graph(path, k_max: int = MAX_OBJECTS) -> VisualGraph:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        return parse_scene_graph(data, k_max)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# embeddings


def hashed_vector(text: str, seed: int, dim: int) -> np.ndarray:
    """Deterministic pseudo-embedding of ``text``: unit-variance entries / sqrt(dim)."""
    digest = hashlib.blake2b(f"{int(seed)}\x00{text}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return rng.standard_normal(dim) / np.sqrt(dim)


@dataclass(frozen=True)
class HashedEmbeddings:
    seed: int
    dim: int

    def embed(self, names: Sequence[str], key: str | None = None) -> np.ndarray:
        if not names:
            return np.zeros((0, self.dim))
        return np.stack([hashed_vector(name, self.seed, self.dim) for name in names])


@dataclass
class FileEmbeddings:
    """Precomputed node embeddings stored in an ``.npz`` archive.

    Each array is keyed by record id and holds one row per node.
    """

    path: str
    _arrays: dict = field(default=None, repr=False)

    def _load(self):
        if self._arrays is None:
            with np.load(self.path, allow_pickle=False) as data:
                self._arrays = {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
        return self._arrays

    def embed(self, names: Sequence[str], key: str | None = None) -> np.ndarray:
        arrays = self._load()
        if key is None or key not in arrays:
            raise InputError(f"missing embedding: {key}")
        mat = arrays[key]
        if mat.ndim != 2:
            raise InputError(f"embedding {key!r} is not a matrix")
        if mat.shape[0] < len(names):
            raise InputError(f"missing embedding: {mat.shape[0]}")
        return mat[: len(names)].copy()


def embed_nodes(names: Sequence[str], source, key: str | None = None) -> np.ndarray:
    x = source.embed(names, key)
    if not np.all(np.isfinite(x)):
        raise InputError(f"non-finite node embedding for {key!r}")
    return x


class VectorTable:
    """Lookup table from a label to a fixed-width vector."""

    def __init__(self, vectors: Mapping[str, np.ndarray], kind: str = "edge label"):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.kind = kind
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise ShapeError(f"{kind} vectors disagree in shape: {sorted(dims)}")
        self.dim = next(iter(dims))[0] if dims else 0

    @classmethod
    def random(cls, labels: Iterable[str], dim: int, rng: np.random.Generator,
               kind: str = "edge label", reserved: Sequence[str] = (SELF_LABEL,)) -> "VectorTable":
        names = list(reserved) + sorted(set(labels) - set(reserved))
        return cls({name: rng.standard_normal(dim) for name in names}, kind)

    def __contains__(self, label) -> bool:
        return label in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, label) -> np.ndarray:
        try:
            return self.vectors[label]
        except KeyError:
            raise InputError(f"unknown {self.kind}: {label!r}") from None


EdgeTable = VectorTable


def embed_edges(graph, table: EdgeTable) -> np.ndarray:
    """Edge tensor ``(m, m, dim)``; zero wherever the graph has no edge."""
    adj = graph.adjacency
    m = adj.shape[0]
    out = np.zeros((m, m, table.dim))
    for i, j in zip(*np.nonzero(adj)):
        out[i, j] = table[graph.edge_labels[i, j]]
    return out
