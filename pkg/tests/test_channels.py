import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmjre.channels import (
    ChannelParams, MLP, PMIStats, build_pmi_matrix, build_pos_channel, build_sd_matrix,
    co_channel, fuse_channels, pmi_matrix, sd_channel, w_gcn,
)
from mmjre.errors import InputError, ShapeError
from mmjre.graphs import TokenizedSentence, VectorTable, build_textual_graph
from mmjre.rng import stream
from oracles import floyd_warshall, pmi_by_counting, random_heads


def sent(tokens, heads=None, pos=None):
    n = len(tokens)
    heads = heads if heads is not None else [0] * n
    return TokenizedSentence(tuple(tokens), tuple(pos or ["X"] * n), tuple(heads), ("d",) * n)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 100_000))
def test_sd_matches_floyd_warshall(n, seed):
    heads = random_heads(np.random.default_rng(seed), n)
    M = build_sd_matrix(build_textual_graph(sent(["w"] * n, heads)))
    assert np.array_equal(M, floyd_warshall(heads))


def test_linear_offset_seven_syntactic_distance_two():
    tokens = ["Thompson", "and", "Curry", "celebrate", "with", "the", "O'Brien", "Trophy"]
    heads = [3, 2, 0, 3, 3, 7, 7, 3]
    M = build_sd_matrix(build_textual_graph(sent(tokens, heads)))
    i, j = tokens.index("Thompson"), tokens.index("Trophy")
    assert j - i == 7
    assert M[i, j] == M[j, i] == 2


def test_sd_channel_clamps():
    M = np.array([[0, 40], [40, 0]])
    table = np.arange(33 * 2, dtype=float).reshape(33, 2)
    R = sd_channel(M, table, cap=32)
    assert np.array_equal(R.values[0, 1], table[32])
    with pytest.raises(ShapeError):
        sd_channel(M, table[:10], cap=32)


WORDS = ["curry", "nba", "trophy", "paris", "the", "a", "won", "game", "fans", "night"]


def corpus20():
    rng = np.random.default_rng(11)
    out = []
    for _ in range(20):
        k = int(rng.integers(2, 7))
        out.append(list(rng.choice(WORDS, k)))
    return out


def test_pmi_matches_counting():
    corpus = corpus20()
    stats = PMIStats.from_corpus(corpus)
    sets = [set(s) for s in corpus]
    for a in WORDS:
        for b in WORDS:
            ref = pmi_by_counting(sets, a, b)
            got = stats.pmi(a, b)
            assert (got == ref == -math.inf) or got == pytest.approx(ref, abs=1e-12)


def test_pmi_matrix_rounding_rules():
    corpus = corpus20()
    stats = PMIStats.from_corpus(corpus)
    sets = [set(s) for s in corpus]
    target = ["curry", "nba", "trophy", "the", "won", "unseen"]
    M = pmi_matrix(stats, target, cap=16)
    for i, a in enumerate(target):
        for j, b in enumerate(target):
            v = pmi_by_counting(sets, a, b) if a in WORDS and b in WORDS else -math.inf
            want = min(math.ceil(v), 16) if v >= 0 else -1
            assert M[i, j] == want
    assert np.array_equal(M, M.T)
    assert M[-1, -1] == -1
    assert (M == -1).any() and (M > 0).any()


def test_pmi_cap():
    # a pair that always co-occurs in 1 of 10**8 sentences has PMI = log(1e8) > 16
    stats = PMIStats(10 ** 8)
    stats.unigrams.update({"x": 1, "y": 1})
    stats.pairs[("x", "y")] = 1
    assert pmi_matrix(stats, ["x", "y"], cap=16)[0, 1] == 16


def test_pmi_cache_round_trip(tmp_path):
    stats = PMIStats.from_corpus(corpus20())
    stats.save(tmp_path / "pmi.tsv")
    back = PMIStats.load(tmp_path / "pmi.tsv")
    target = sent(WORDS)
    assert np.array_equal(build_pmi_matrix(back, target), build_pmi_matrix(corpus20(), target))


def test_pmi_needs_corpus():
    with pytest.raises(InputError):
        build_pmi_matrix([], sent(["a"]))


def test_co_channel_indexing():
    table = np.arange(18, dtype=float)[:, None]
    R = co_channel(np.array([[-1, 16], [3, 0]]), table, cap=16)
    assert R.values[..., 0].tolist() == [[0, 17], [4, 1]]


def test_pos_channel_is_span_sum():
    pos = ["PROPN", "VERB", "DET", "NOUN"]
    table = VectorTable.random(pos, 3, stream(0, "pos"), kind="pos tag", reserved=())
    R = build_pos_channel(sent(["a", "b", "c", "d"], pos=pos), table).values
    V = np.stack([table[p] for p in pos])
    for i in range(4):
        for j in range(4):
            lo, hi = min(i, j), max(i, j)
            assert np.allclose(R[i, j], V[lo:hi + 1].sum(axis=0), atol=1e-12)
    with pytest.raises(InputError, match="unknown pos tag"):
        build_pos_channel(sent(["a"], pos=["SYM"]), table)


def test_w_gcn_weights_are_row_distributions():
    rng = np.random.default_rng(0)
    n, dl, d = 5, 4, 6
    p = ChannelParams.init(dl, d, rng)
    O = rng.standard_normal((n, d))
    S, w = w_gcn(rng.standard_normal((n, n, dl)), O, p, return_weights=True)
    assert S.shape == (n, d)
    assert np.allclose(w.sum(axis=1), 1, atol=1e-12)
    assert np.allclose(S, w @ O @ p.W_r2.T)


def test_fusion_mlp_shapes():
    rng = np.random.default_rng(0)
    mlp = MLP.init((12, 4, 4), rng)
    S = fuse_channels(*(rng.standard_normal((3, 4)) for _ in range(3)), mlp)
    assert S.shape == (3, 4)
    with pytest.raises(ShapeError):
        fuse_channels(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((2, 4)), mlp)
