"""Word-pair feature channels (part of speech, syntactic distance, PMI
co-occurrence), the weighted graph convolution over each, and their fusion."""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import relu, softmax, uniform_bias, uniform_init
from .errors import InputError, ShapeError
from .graphs import TextualGraph, TokenizedSentence, VectorTable

SD_CAP = 32
CO_CAP = 16


@dataclass(frozen=True)
class ChannelTensor:
    kind: str  # "Pos", "Sd" or "Co"
    values: np.ndarray  # (n, n, d_l)
    matrix: np.ndarray | None = None  # integer source matrix for Sd / Co


# ---------------------------------------------------------------------------
# part of speech


def build_pos_channel(s: TokenizedSentence, pos_table: VectorTable) -> ChannelTensor:
    """Cell (i, j) holds the sum of POS vectors over tokens min(i, j)..max(i, j)."""
    V = np.stack([pos_table[t] for t in s.pos_tags])
    n, d = V.shape
    R = np.empty((n, n, d))
    for i in range(n):
        run = np.cumsum(V[i:], axis=0)
        R[i, i:] = run
        R[i:, i] = run
    return ChannelTensor("Pos", R)


# ---------------------------------------------------------------------------
# syntactic distance


def build_sd_matrix(g: TextualGraph) -> np.ndarray:
    """All-pairs hop counts over the dependency tree (BFS from every token)."""
    adj = g.adjacency
    n = g.n
    neighbours = [[j for j in np.flatnonzero(adj[i]) if j != i] for i in range(n)]
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in neighbours[u]:
                if dist[src, v] < 0:
                    dist[src, v] = dist[src, u] + 1
                    queue.append(v)
    if np.any(dist < 0):
        raise InputError("dependency graph is disconnected")
    return dist


def sd_channel(M: np.ndarray, table: np.ndarray, cap: int = SD_CAP) -> ChannelTensor:
    """Embed clamped distances; ``table`` has ``cap + 1`` rows."""
    if table.shape[0] != cap + 1:
        raise ShapeError(f"Sd table needs {cap + 1} rows, has {table.shape[0]}")
    return ChannelTensor("Sd", table[np.minimum(M, cap)], M)


# ---------------------------------------------------------------------------
# co-occurrence


class PMIStats:
    """Sentence-level token-type counts for pointwise mutual information."""

    def __init__(self, n_sentences: int = 0, unigrams: Counter | None = None,
                 pairs: Counter | None = None):
        self.n_sentences = n_sentences
        self.unigrams = unigrams if unigrams is not None else Counter()
        self.pairs = pairs if pairs is not None else Counter()

    @classmethod
    def from_corpus(cls, corpus: Iterable) -> "PMIStats":
        stats = cls()
        for sent in corpus:
            tokens = sent.tokens if isinstance(sent, TokenizedSentence) else sent
            types = sorted(set(tokens))
            stats.n_sentences += 1
            stats.unigrams.update(types)
            stats.pairs.update(combinations(types, 2))
        return stats

    def pmi(self, a: str, b: str) -> float:
        """Natural-log PMI; ``-inf`` when the pair never co-occurs."""
        if a == b:
            joint = self.unigrams.get(a, 0)
        else:
            joint = self.pairs.get((a, b) if a < b else (b, a), 0)
        if joint == 0:
            return -math.inf
        ratio = joint * self.n_sentences / (self.unigrams[a] * self.unigrams[b])
        return math.log(ratio)

    def save(self, path) -> None:
        lines = [f"N\t{self.n_sentences}"]
        for tok in sorted(self.unigrams):
            _check_token(tok)
            lines.append(f"U\t{tok}\t{self.unigrams[tok]}")
        for (a, b) in sorted(self.pairs):
            lines.append(f"P\t{a}\t{b}\t{self.pairs[(a, b)]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PMIStats":
        stats = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            try:
                if parts[0] == "N" and len(parts) == 2:
                    stats.n_sentences = int(parts[1])
                elif parts[0] == "U" and len(parts) == 3:
                    stats.unigrams[parts[1]] = int(parts[2])
                elif parts[0] == "P" and len(parts) == 4:
                    stats.pairs[(parts[1], parts[2])] = int(parts[3])
                else:
                    raise ValueError
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed PMI cache line") from None
        return stats


def _check_token(tok: str):
    if "\t" in tok or "\n" in tok:
        raise InputError(f"token {tok!r} contains a tab or newline; cannot cache")


def pmi_matrix(stats: PMIStats, tokens: Sequence[str], cap: int = CO_CAP) -> np.ndarray:
    """Rounded-up PMI per token pair; negative or undefined PMI becomes -1."""
    n = len(tokens)
    M = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i, n):
            v = stats.pmi(tokens[i], tokens[j])
            M[i, j] = M[j, i] = min(math.ceil(v), cap) if v >= 0 else -1
    return M


def build_pmi_matrix(corpus, target: TokenizedSentence, cap: int = CO_CAP) -> np.ndarray:
    if isinstance(corpus, PMIStats):
        stats = corpus
    else:
        corpus = list(corpus)
        if not corpus:
            raise InputError("PMI needs a non-empty corpus")
        stats = PMIStats.from_corpus(corpus)
    return pmi_matrix(stats, target.tokens, cap)


def co_channel(M: np.ndarray, table: np.ndarray, cap: int = CO_CAP) -> ChannelTensor:
    """Embed clamped PMI values -1..cap; ``table`` has ``cap + 2`` rows."""
    if table.shape[0] != cap + 2:
        raise ShapeError(f"Co table needs {cap + 2} rows, has {table.shape[0]}")
    return ChannelTensor("Co", table[np.clip(M, -1, cap) + 1], M)


# ---------------------------------------------------------------------------
# weighted graph convolution and fusion


@dataclass
class ChannelParams:
    w_r1: np.ndarray  # (d_l,)
    b: float
    W_r2: np.ndarray  # (d_T, d_T)

    @classmethod
    def init(cls, d_l: int, d_T: int, rng: np.random.Generator) -> "ChannelParams":
        return cls(uniform_init(rng, 1, d_l)[0], float(uniform_bias(rng, 1, d_l)[0]),
                   uniform_init(rng, d_T, d_T))


def w_gcn(R, O, params: ChannelParams, return_weights: bool = False):
    """Each word mixes the projected context rows with weights scored from its channel row."""
    values = R.values if isinstance(R, ChannelTensor) else np.asarray(R, dtype=np.float64)
    O = np.asarray(O, dtype=np.float64)
    n = O.shape[0]
    if values.shape[:2] != (n, n) or values.shape[2] != params.w_r1.shape[0]:
        raise ShapeError(f"channel tensor {values.shape} incompatible with n={n}, "
                         f"d_l={params.w_r1.shape[0]}")
    if O.shape[1] != params.W_r2.shape[1]:
        raise ShapeError(f"context width {O.shape[1]} != W_r2 input {params.W_r2.shape[1]}")
    weights = softmax(relu(values @ params.w_r1 + params.b), axis=1)
    S = weights @ (O @ params.W_r2.T)
    if return_weights:
        return S, weights
    return S


@dataclass
class MLP:
    """Stack of affine layers with ReLU between them (none after the last)."""

    weights: list
    biases: list

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "MLP":
        Ws, bs = [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            Ws.append(uniform_init(rng, d_out, d_in))
            bs.append(uniform_bias(rng, d_out, d_in))
        return cls(Ws, bs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        last = len(self.weights) - 1
        for idx, (W, b) in enumerate(zip(self.weights, self.biases)):
            if x.shape[-1] != W.shape[1]:
                raise ShapeError(f"MLP layer {idx} expects width {W.shape[1]}, got {x.shape[-1]}")
            x = x @ W.T + b
            if idx < last:
                x = relu(x)
        return x


def fuse_channels(S_pos, S_sd, S_co, mlp: MLP) -> np.ndarray:
    if not (np.shape(S_pos) == np.shape(S_sd) == np.shape(S_co)):
        raise ShapeError("channel outputs differ in shape: "
                         f"{np.shape(S_pos)}, {np.shape(S_sd)}, {np.shape(S_co)}")
    return mlp(np.concatenate([S_pos, S_sd, S_co], axis=1))
