import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmjre.encoder import (
    AttentionParams, CrossAttentionParams, FFN, LayerNorm, TransformerBlockParams,
    attribute_attention, cross_modal_attention, encode_graph, flatten_params, load_checkpoint,
    project_visual, save_checkpoint, softmax, transformer_block,
)
from mmjre.errors import ConfigError, NumericalError, ShapeError
from mmjre.rng import stream
from oracles import plain_attention


def random_mask(rng, n):
    A = (rng.random((n, n)) < 0.4).astype(np.int8)
    np.fill_diagonal(A, 1)
    return A


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_masked_positions_get_zero_weight(n, seed):
    rng = np.random.default_rng(seed)
    d, dz = 8, 3
    p = AttentionParams.init(d, dz, rng)
    A = random_mask(rng, n)
    _, w = attribute_attention(rng.standard_normal((n, d)), rng.standard_normal((n, n, dz)), A, p,
                               return_weights=True)
    assert np.all(w[A == 0] == 0.0)
    assert np.max(np.abs(w.sum(axis=1) - 1)) < 1e-12


def test_zero_edges_full_adjacency_is_plain_attention():
    rng = np.random.default_rng(1)
    n, d, dz = 6, 12, 4
    p = AttentionParams.init(d, dz, rng)
    X = rng.standard_normal((n, d))
    H = attribute_attention(X, np.zeros((n, n, dz)), np.ones((n, n)), p)
    ref = plain_attention(X, p.W_Q, p.W_K, p.W_V)
    assert np.max(np.abs(H - ref)) < 1e-10


def test_edge_embeddings_change_output():
    rng = np.random.default_rng(2)
    n, d, dz = 4, 8, 3
    p = AttentionParams.init(d, dz, rng)
    X = rng.standard_normal((n, d))
    A = np.ones((n, n))
    Z = rng.standard_normal((n, n, dz))
    assert not np.allclose(attribute_attention(X, Z, A, p),
                           attribute_attention(X, np.zeros_like(Z), A, p))


def test_attention_shape_errors():
    rng = np.random.default_rng(0)
    p = AttentionParams.init(4, 2, rng)
    with pytest.raises(ShapeError):
        attribute_attention(np.zeros((3, 5)), np.zeros((3, 3, 2)), np.ones((3, 3)), p)
    with pytest.raises(ShapeError, match="no admissible"):
        attribute_attention(np.zeros((2, 4)), np.zeros((2, 2, 2)), np.array([[1, 0], [0, 0]]), p)


def test_layer_norm_statistics():
    x = np.random.default_rng(0).standard_normal((5, 16)) * 3 + 2
    y = LayerNorm.init(16)(x)
    assert np.allclose(y.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(y.var(axis=1), 1, atol=1e-4)


def test_transformer_block_output_is_normalised():
    rng = np.random.default_rng(3)
    n, d, dz = 5, 16, 4
    blk = TransformerBlockParams.init(d, dz, rng)
    out = transformer_block(rng.standard_normal((n, d)), rng.standard_normal((n, n, dz)),
                            random_mask(rng, n), blk)
    assert out.shape == (n, d)
    assert np.allclose(out.mean(axis=1), 0, atol=1e-10)


def test_encode_graph_rejects_non_finite():
    rng = np.random.default_rng(0)
    blk = TransformerBlockParams.init(4, 2, rng)
    X = np.full((2, 4), np.nan)
    with pytest.raises(NumericalError):
        encode_graph(X, np.zeros((2, 2, 2)), np.ones((2, 2)), [blk])


def test_visual_projection_shapes():
    rng = np.random.default_rng(0)
    ffn = FFN.init(32, 8, 8, rng)
    assert project_visual(rng.standard_normal((3, 32)), ffn).shape == (3, 8)
    with pytest.raises(ShapeError):
        project_visual(rng.standard_normal((3, 31)), ffn)


def test_cross_attention_weights():
    rng = np.random.default_rng(4)
    n, k, d, h = 7, 3, 16, 4
    p = CrossAttentionParams.init(d, h, rng)
    O, w = cross_modal_attention(rng.standard_normal((n, d)), rng.standard_normal((k, d)), p,
                                 return_weights=True)
    assert O.shape == (n, d) and w.shape == (h, n, k)
    assert np.max(np.abs(w.sum(axis=-1) - 1)) < 1e-12


def test_cross_attention_single_object_is_constant_context():
    # with one object every token attends to it with weight 1
    rng = np.random.default_rng(5)
    d = 8
    p = CrossAttentionParams.init(d, 2, rng)
    H_T, H_I = rng.standard_normal((4, d)), rng.standard_normal((1, d))
    O = cross_modal_attention(H_T, H_I, p)
    ctx = H_I @ p.W_v.T @ p.W_o.T + p.b_o
    assert np.allclose(O, p.ln(H_T + ctx), atol=1e-12)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        CrossAttentionParams.init(10, 3, np.random.default_rng(0))


def test_softmax_handles_masked_rows():
    x = np.array([[0.0, -np.inf, 1.0]])
    s = softmax(x)
    assert s[0, 1] == 0 and abs(s.sum() - 1) < 1e-15


def test_checkpoint_round_trip(tmp_path):
    blk = TransformerBlockParams.init(8, 2, stream(0, "blk"))
    tensors = flatten_params(blk, "text.")
    save_checkpoint(tmp_path / "c.npz", tensors)
    back = load_checkpoint(tmp_path / "c.npz")
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])
