"""Edge-typed graph attention, transformer block, visual projection and
image-to-text multi-head attention.

Linear maps follow the ``(out, in)`` weight convention: ``y = x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError


def uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def uniform_bias(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=out_dim)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class LayerNorm:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def init(cls, dim: int, eps: float = 1e-5) -> "LayerNorm":
        return cls(np.ones(dim), np.zeros(dim), eps)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + self.eps) * self.gamma + self.beta


@dataclass
class FFN:
    """Two-layer perceptron with a ReLU in between; input and output sizes may differ."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator) -> "FFN":
        return cls(
            uniform_init(rng, d_hidden, d_in),
            uniform_bias(rng, d_hidden, d_in),
            uniform_init(rng, d_out, d_hidden),
            uniform_bias(rng, d_out, d_hidden),
        )

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"FFN expects last dim {self.d_in}, got {x.shape[-1]}")
        return relu(x @ self.W1.T + self.b1) @ self.W2.T + self.b2


@dataclass
class AttentionParams:
    W_Q: np.ndarray  # (d, d)
    W_K: np.ndarray  # (d, d)
    W_V: np.ndarray  # (d, d)
    W_z: np.ndarray  # (d, d_z), edge embedding into keys
    W_r: np.ndarray  # (d, d_z), edge embedding into values

    @classmethod
    def init(cls, d: int, d_z: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(
            uniform_init(rng, d, d),
            uniform_init(rng, d, d),
            uniform_init(rng, d, d),
            uniform_init(rng, d, d_z),
            uniform_init(rng, d, d_z),
        )

    @property
    def d(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d_z(self) -> int:
        return self.W_z.shape[1]


def attribute_attention(X, Z, A, params: AttentionParams, return_weights: bool = False):
    """Self-attention whose keys and values carry the edge embedding of each pair.

    For query ``i`` and position ``j`` the key is ``W_K x_j + W_z z_ij`` and
    the value is ``W_V x_j + W_r z_ij``. Positions with ``A[i, j] == 0``
    receive exactly zero weight.

    Parameters
    ----------
    X : (n, d) node states
    Z : (n, n, d_z) edge embeddings
    A : (n, n) 0/1 adjacency; every row needs at least one nonzero entry
    """
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    A = np.asarray(A)
    n, d = X.shape
    if d != params.d:
        raise ShapeError(f"node dim {d} != attention dim {params.d}")
    if Z.shape != (n, n, params.d_z):
        raise ShapeError(f"edge tensor shape {Z.shape} != {(n, n, params.d_z)}")
    if A.shape != (n, n):
        raise ShapeError(f"adjacency shape {A.shape} != {(n, n)}")
    if not np.all(A.any(axis=1)):
        raise ShapeError("adjacency has a row with no admissible position")

    Q = X @ params.W_Q.T
    K = (X @ params.W_K.T)[None, :, :] + Z @ params.W_z.T
    V = (X @ params.W_V.T)[None, :, :] + Z @ params.W_r.T
    logits = np.einsum("id,ijd->ij", Q, K) / np.sqrt(d)
    logits = np.where(A != 0, logits, -np.inf)
    weights = softmax(logits, axis=1)
    H = np.einsum("ij,ijd->id", weights, V)
    if return_weights:
        return H, weights
    return H


@dataclass
class TransformerBlockParams:
    attn: AttentionParams
    ffn: FFN
    ln1: LayerNorm
    ln2: LayerNorm

    @classmethod
    def init(cls, d: int, d_z: int, rng: np.random.Generator,
             ffn_mult: int = 4, ln_eps: float = 1e-5) -> "TransformerBlockParams":
        return cls(
            AttentionParams.init(d, d_z, rng),
            FFN.init(d, ffn_mult * d, d, rng),
            LayerNorm.init(d, ln_eps),
            LayerNorm.init(d, ln_eps),
        )


def transformer_block(X, Z, A, params: TransformerBlockParams) -> np.ndarray:
    """Post-norm block: ``h = LN(X + attn)``, ``out = LN(h + FFN(h))``."""
    h = params.ln1(X + attribute_attention(X, Z, A, params.attn))
    return params.ln2(h + params.ffn(h))


def encode_graph(X, Z, A, blocks) -> np.ndarray:
    H = np.asarray(X, dtype=np.float64)
    for block in blocks:
        H = transformer_block(H, Z, A, block)
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite encoder output")
    return H


def project_visual(H_raw, ffn: FFN) -> np.ndarray:
    """Map object features (d_I wide) to the token width d_T."""
    H_raw = np.asarray(H_raw, dtype=np.float64)
    if H_raw.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {H_raw.shape}")
    return ffn(H_raw)


@dataclass
class CrossAttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    heads: int
    ln: LayerNorm

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator,
             ln_eps: float = 1e-5) -> "CrossAttentionParams":
        if heads <= 0 or d % heads:
            raise ConfigError(f"heads={heads} must divide d_T={d}")
        return cls(
            uniform_init(rng, d, d),
            uniform_init(rng, d, d),
            uniform_init(rng, d, d),
            uniform_init(rng, d, d),
            uniform_bias(rng, d, d),
            heads,
            LayerNorm.init(d, ln_eps),
        )


def cross_modal_attention(H_T, H_I, params: CrossAttentionParams, return_weights: bool = False):
    """Tokens attend over objects; the result is added to ``H_T`` and layer-normalised.

    Returns ``O`` of shape (n, d) and, optionally, weights of shape (heads, n, k).
    """
    H_T = np.asarray(H_T, dtype=np.float64)
    H_I = np.asarray(H_I, dtype=np.float64)
    n, d = H_T.shape
    k = H_I.shape[0]
    if H_I.ndim != 2 or H_I.shape[1] != d:
        raise ShapeError(f"object states {H_I.shape} do not match token width {d}")
    h = params.heads
    if h <= 0 or d % h:
        raise ConfigError(f"heads={h} must divide d_T={d}")
    dh = d // h
    Q = (H_T @ params.W_q.T).reshape(n, h, dh).transpose(1, 0, 2)
    K = (H_I @ params.W_k.T).reshape(k, h, dh).transpose(1, 0, 2)
    V = (H_I @ params.W_v.T).reshape(k, h, dh).transpose(1, 0, 2)
    weights = softmax(Q @ K.transpose(0, 2, 1) / np.sqrt(dh), axis=-1)  # (h, n, k)
    ctx = (weights @ V).transpose(1, 0, 2).reshape(n, d)
    O_tilde = ctx @ params.W_o.T + params.b_o
    O = params.ln(H_T + O_tilde)
    if return_weights:
        return O, weights
    return O


# ---------------------------------------------------------------------------
# checkpoints


def flatten_params(obj, prefix: str = "") -> dict[str, np.ndarray]:
    """Collect every array inside nested parameter dataclasses/lists under dotted names."""
    out: dict[str, np.ndarray] = {}
    if isinstance(obj, np.ndarray):
        out[prefix.rstrip(".")] = obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(flatten_params(item, f"{prefix}{i}."))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            out.update(flatten_params(obj[key], f"{prefix}{key}."))
    elif hasattr(obj, "__dataclass_fields__"):
        for f in fields(obj):
            out.update(flatten_params(getattr(obj, f.name), f"{prefix}{f.name}."))
    return out


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors (little-endian, shape recorded per tensor)."""
    arrays = {name: np.ascontiguousarray(t, dtype="<f8") for name, t in tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        return {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
