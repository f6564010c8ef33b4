"""Cross-path actor consistency losses at three granularities.

The two path orderings produce two views of every actor. Matching views are
attracted and mismatched ones repelled using exp(cosine) similarities:

* frame-frame: a frame representation against the same actor's other frames
  in the opposite path;
* frame-video: a frame representation against all frame-pooled video
  representations in the minibatch from the opposite path;
* video-video: plain cosine distance between matched video representations.

Every comparison is run in both path directions and averaged uniformly over
all anchors. Denominators include the positive term; there is no temperature
beyond the exp(cos) form itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    cosine_similarity,
    div,
    exp,
    log,
    matmul,
    neg,
    reshape,
    sqrt,
    tmean,
    transpose,
    tsum,
)
from .model import PathOutputs

__all__ = [
    "ContrastiveWeights",
    "LossBreakdown",
    "exp_cosine_similarity",
    "frame_frame_loss",
    "frame_video_loss",
    "video_video_loss",
    "actor_contrastive_loss",
]


@dataclass(frozen=True)
class ContrastiveWeights:
    """Nonnegative component weights; all 1.0 by default."""

    frame_frame: float = 1.0
    frame_video: float = 1.0
    video_video: float = 1.0

    def __post_init__(self):
        if min(self.frame_frame, self.frame_video, self.video_video) < 0:
            raise ValueError("contrastive weights must be >= 0")

    @property
    def active(self) -> bool:
        return max(self.frame_frame, self.frame_video, self.video_video) > 0


@dataclass
class LossBreakdown:
    """Scalar loss components of one step plus the batch size they used.

    ``contrastive`` is exactly the weighted sum of the three components and
    ``total`` exactly ``classification + contrastive``.
    """

    frame_frame: float
    frame_video: float
    video_video: float
    contrastive: float
    classification: float
    total: float
    batch_size: int

    def to_dict(self) -> dict:
        return {
            "l_ff": self.frame_frame,
            "l_fv": self.frame_video,
            "l_vv": self.video_video,
            "l_contrastive": self.contrastive,
            "l_cls": self.classification,
            "l_total": self.total,
            "batch_size": self.batch_size,
        }


def exp_cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """exp(cos(u, v)); ranges over [1/e, e]."""
    return exp(cosine_similarity(u, v))


def _normalize_rows(x: Tensor) -> Tensor:
    """L2-normalize the last axis; zero rows signal degenerate features."""
    sq = tsum(x * x, axis=-1, keepdims=True)
    if sq.data.min() == 0.0:
        raise ValueError("zero-norm representation in contrastive loss")
    return div(x, sqrt(sq))


def _as_batched(x: Tensor, rank: int) -> Tensor:
    if x.ndim == rank:
        return reshape(x, (1,) + x.shape)
    if x.ndim == rank + 1:
        return x
    raise ValueError(f"expected rank {rank} or {rank + 1}, got shape {x.shape}")


def _info_nce_rows(sim: Tensor, pos_mask: np.ndarray, axis: int) -> Tensor:
    """Mean over anchors of -log(exp(sim_pos) / sum_axis exp(sim)).

    Computed as a ratio of shared exp terms so the degenerate single-candidate
    case yields exactly 0.
    """
    e = exp(sim)
    numer = tsum(e * pos_mask, axis=axis)
    denom = tsum(e, axis=axis)
    return tmean(neg(log(div(numer, denom))))


def frame_frame_loss(st_enhanced: Tensor, ts_enhanced: Tensor) -> Tensor:
    """Per-actor frame alignment across paths, both directions.

    Inputs are (K, N, C) or batched (B, K, N, C); for each actor the K frame
    representations of one path score against the K frames of the other.
    """
    a = _as_batched(st_enhanced, 3)
    b = _as_batched(ts_enhanced, 3)
    bsz, k, n, c = a.shape
    # (B*N, K, C) per path, rows normalized
    fa = _normalize_rows(reshape(transpose(a, (0, 2, 1, 3)), (bsz * n, k, c)))
    fb = _normalize_rows(reshape(transpose(b, (0, 2, 1, 3)), (bsz * n, k, c)))
    sim = matmul(fa, transpose(fb, (0, 2, 1)))  # (B*N, K, K) cosines
    eye = np.broadcast_to(np.eye(k), sim.shape).copy()
    forward = _info_nce_rows(sim, eye, axis=2)  # anchors in the first path
    backward_ = _info_nce_rows(sim, eye, axis=1)  # anchors in the second path
    return (forward + backward_) * 0.5


def frame_video_loss(
    st_enhanced: Tensor,
    ts_enhanced: Tensor,
    st_video: Tensor,
    ts_video: Tensor,
) -> Tensor:
    """Frame-to-video alignment against every video representation in the batch.

    Anchors are all (episode, frame, actor) representations of one path; the
    candidate set is the batch's B*N video representations from the other
    path, positives being the same episode and actor.
    """
    fa = _as_batched(st_enhanced, 3)
    fb = _as_batched(ts_enhanced, 3)
    va = _as_batched(st_video, 2)
    vb = _as_batched(ts_video, 2)
    bsz, k, n, c = fa.shape

    def anchors(frames: Tensor) -> Tensor:
        return _normalize_rows(reshape(frames, (bsz * k * n, c)))

    def candidates(video: Tensor) -> Tensor:
        return _normalize_rows(reshape(video, (bsz * n, c)))

    # positive column for anchor (b, k, n) is b*N + n
    cols = (np.arange(bsz)[:, None, None] * n + np.arange(n)[None, None, :])
    cols = np.broadcast_to(cols, (bsz, k, n)).reshape(-1)
    mask = np.zeros((bsz * k * n, bsz * n))
    mask[np.arange(bsz * k * n), cols] = 1.0

    sim_ab = matmul(anchors(fa), transpose(candidates(vb)))
    sim_ba = matmul(anchors(fb), transpose(candidates(va)))
    forward = _info_nce_rows(sim_ab, mask, axis=1)
    backward_ = _info_nce_rows(sim_ba, mask, axis=1)
    return (forward + backward_) * 0.5


def video_video_loss(st_video: Tensor, ts_video: Tensor) -> Tensor:
    """Mean cosine distance 1 - cos between matched video representations."""
    va = _normalize_rows(reshape(_as_batched(st_video, 2), (-1, st_video.shape[-1])))
    vb = _normalize_rows(reshape(_as_batched(ts_video, 2), (-1, ts_video.shape[-1])))
    cos = tsum(va * vb, axis=1)
    return tmean(1.0 - cos)


def actor_contrastive_loss(
    st: PathOutputs,
    ts: PathOutputs,
    weights: ContrastiveWeights,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the three components over one batch.

    Returns the differentiable total and the detached component values.
    Zero-weight components are skipped entirely (no gradient contribution).
    """
    zero = Tensor(np.zeros(()))
    l_ff = frame_frame_loss(st.enhanced, ts.enhanced) if weights.frame_frame > 0 else zero
    l_fv = (frame_video_loss(st.enhanced, ts.enhanced, st.video, ts.video)
            if weights.frame_video > 0 else zero)
    l_vv = video_video_loss(st.video, ts.video) if weights.video_video > 0 else zero
    total = (l_ff * weights.frame_frame + l_fv * weights.frame_video
             + l_vv * weights.video_video)
    parts = {"l_ff": l_ff.item(), "l_fv": l_fv.item(), "l_vv": l_vv.item()}
    return total, parts
