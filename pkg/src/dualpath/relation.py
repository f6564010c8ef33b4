"""Actor relation units: positional encodings, self-attention, and the
spatial / temporal transformer blocks.

Both units share one structure: add a sinusoidal encoding to the tokens, then
a residual multi-head self-attention stage and a residual feed-forward stage,
each followed by layer norm. The spatial unit attends across the actors of a
frame (positions come from box centers); the temporal unit attends across the
frames of one actor (positions come from frame indices).

All forwards accept either a single token matrix (T, C) or a batch
(B, T, C); batching is semantically a loop over the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    constant,
    layer_norm,
    matmul,
    parameter,
    relu,
    reshape,
    softmax,
    transpose,
)

__all__ = [
    "EncodingConfig",
    "AttentionBlockParams",
    "AttentionTrace",
    "sinusoid_table",
    "spe_encode",
    "tpe_encode",
    "init_attention_block",
    "mhsa_forward",
    "s_trans_forward",
    "t_trans_forward",
]


@dataclass(frozen=True)
class EncodingConfig:
    """Sinusoidal encoding geometry: target channel count and frequency base."""

    dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"encoding dim must be a positive even number, got {self.dim}")


def sinusoid_table(values: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """(..., dim) table with sin/cos pairs over geometric frequencies.

    Channel 2i is sin(v / base^(2i/dim)), channel 2i+1 the matching cos.
    """
    values = np.asarray(values, dtype=np.float64)
    half = dim // 2
    div = base ** (2.0 * np.arange(half) / dim)
    angles = values[..., None] / div
    out = np.empty(values.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def spe_encode(centers: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """Spatial position encoding of normalized box centers.

    ``centers`` is (..., N, 2) with coordinates in [0, 1]. The first half of
    the channels encodes x, the second half y, each as interleaved sin/cos.
    Requires ``cfg.dim`` divisible by 4.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if cfg.dim % 4:
        raise ValueError(f"spatial encoding needs dim divisible by 4, got {cfg.dim}")
    if centers.shape[-1] != 2:
        raise ValueError(f"centers must end in an (x, y) axis, got shape {centers.shape}")
    if centers.min(initial=0.0) < 0.0 or centers.max(initial=0.0) > 1.0:
        raise ValueError("box centers outside [0, 1]^2; normalize upstream")
    half = cfg.dim // 2
    return np.concatenate(
        [sinusoid_table(centers[..., 0], half, cfg.base),
         sinusoid_table(centers[..., 1], half, cfg.base)],
        axis=-1,
    )


def tpe_encode(frame_indices, cfg: EncodingConfig) -> np.ndarray:
    """Temporal position encoding of integer frame indices, (K, dim)."""
    idx = np.asarray(frame_indices, dtype=np.float64)
    return sinusoid_table(idx, cfg.dim, cfg.base)


@dataclass
class AttentionBlockParams:
    """Weights of one relation unit: QKV/output projections, FFN, two norms.

    The query/key/value projections are bias-free: a key bias in particular
    shifts every score in a softmax row equally and so can never receive
    gradient.
    """

    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    @property
    def model_dim(self) -> int:
        return self.wq.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.wq.shape[1]


def init_attention_block(
    rng: np.random.Generator,
    model_dim: int,
    embed_dim: int,
    heads: int,
    ffn_dim: int,
    prefix: str,
    store: dict[str, Tensor],
) -> AttentionBlockParams:
    """Create one unit's parameters and register them under ``prefix``."""
    if embed_dim % heads:
        raise ValueError(f"embed dim {embed_dim} not divisible by {heads} heads")

    def reg(name, t):
        full = f"{prefix}.{name}"
        if full in store:
            raise ValueError(f"duplicate parameter name {full!r}")
        store[full] = t
        return t

    c, e, f = model_dim, embed_dim, ffn_dim
    p = AttentionBlockParams(
        heads=heads,
        wq=reg("wq", parameter((c, e), rng)),
        wk=reg("wk", parameter((c, e), rng)),
        wv=reg("wv", parameter((c, e), rng)),
        wo=reg("wo", parameter((e, c), rng)),
        bo=reg("bo", parameter(np.zeros(c))),
        w1=reg("w1", parameter((c, f), rng)),
        b1=reg("b1", parameter(np.zeros(f))),
        w2=reg("w2", parameter((f, c), rng)),
        b2=reg("b2", parameter(np.zeros(c))),
        ln1_g=reg("ln1_g", parameter(np.ones(c))),
        ln1_b=reg("ln1_b", parameter(np.zeros(c))),
        ln2_g=reg("ln2_g", parameter(np.ones(c))),
        ln2_b=reg("ln2_b", parameter(np.zeros(c))),
    )
    return p


@dataclass
class AttentionTrace:
    """Recorded attention weights of one unit application.

    ``weights`` is (heads, T, T); every row sums to 1.
    """

    path: str
    unit: str  # "spatial" or "temporal"
    index: int  # frame index for spatial, actor index for temporal
    weights: np.ndarray

    def records(self):
        """One export record per head, matrix in row-major nested lists."""
        for h in range(self.weights.shape[0]):
            yield {
                "path": self.path,
                "unit": self.unit,
                "index": self.index,
                "head": h,
                "weights": self.weights[h].tolist(),
            }


def _batched(tokens: Tensor) -> tuple[Tensor, bool]:
    if tokens.ndim == 2:
        return reshape(tokens, (1,) + tokens.shape), True
    if tokens.ndim == 3:
        return tokens, False
    raise ValueError(f"tokens must be (T, C) or (B, T, C), got {tokens.shape}")


def mhsa_forward(tokens: Tensor, p: AttentionBlockParams) -> tuple[Tensor, np.ndarray]:
    """Multi-head self-attention over the token axis.

    Returns the attended tokens (same shape as the input) and the attention
    weights as a plain (B, heads, T, T) array for tracing.
    """
    x, squeeze = _batched(tokens)
    b, t, c = x.shape
    e, h = p.embed_dim, p.heads
    dh = e // h
    scale = 1.0 / np.sqrt(dh)

    def split_heads(m):  # (B, T, E) -> (B, H, T, dh)
        return transpose(reshape(m, (b, t, h, dh)), (0, 2, 1, 3))

    q = split_heads(matmul(x, p.wq))
    k = split_heads(matmul(x, p.wk))
    v = split_heads(matmul(x, p.wv))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)  # (B, H, T, dh)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, e))
    out = matmul(merged, p.wo) + p.bo
    if squeeze:
        out = reshape(out, (t, c))
    return out, attn.data.copy()


def _ffn(x: Tensor, p: AttentionBlockParams) -> Tensor:
    return matmul(relu(matmul(x, p.w1) + p.b1), p.w2) + p.b2


def _unit_forward(tokens: Tensor, encoding: np.ndarray | None,
                  p: AttentionBlockParams) -> tuple[Tensor, np.ndarray]:
    x = tokens if encoding is None else tokens + constant(encoding)
    attended, attn = mhsa_forward(x, p)
    x2 = layer_norm(x + attended, p.ln1_g, p.ln1_b)
    out = layer_norm(x2 + _ffn(x2, p), p.ln2_g, p.ln2_b)
    return out, attn


def s_trans_forward(
    frame_actors: Tensor,
    centers: np.ndarray,
    p: AttentionBlockParams,
    zero_encoding: bool = False,
) -> tuple[Tensor, np.ndarray]:
    """Spatial unit: relate the N actors of a frame.

    ``frame_actors`` is (N, C) or (B, N, C) with matching ``centers``
    (..., N, 2). ``zero_encoding`` is a test hook that drops the positional
    term to expose permutation equivariance.
    """
    enc = None
    if not zero_encoding:
        cfg = EncodingConfig(p.model_dim)
        enc = spe_encode(np.asarray(centers, dtype=np.float64), cfg)
        if frame_actors.ndim == 3 and enc.ndim == 2:
            enc = np.broadcast_to(enc, frame_actors.shape)
    return _unit_forward(frame_actors, enc, p)


def t_trans_forward(
    actor_frames: Tensor,
    p: AttentionBlockParams,
    zero_encoding: bool = False,
) -> tuple[Tensor, np.ndarray]:
    """Temporal unit: relate the K frames of one actor.

    ``actor_frames`` is (K, C) or (B, K, C); frame indices 0..K-1 feed the
    temporal encoding.
    """
    enc = None
    if not zero_encoding:
        k = actor_frames.shape[-2]
        enc = tpe_encode(np.arange(k), EncodingConfig(p.model_dim))
        if actor_frames.ndim == 3:
            enc = np.broadcast_to(enc, actor_frames.shape)
    return _unit_forward(actor_frames, enc, p)
