"""Dual-order composition of the relation units, classifier heads, scene
context fusion, and prediction fusion.

The model consumes a block of actor features (K frames, N actors, C channels
after the input embedding) plus per-actor box centers and a frame-level scene
feature. Two path orderings are available, spatial-then-temporal and
temporal-then-spatial, alongside the single-order stacks used for ablations.
Group and individual logits from all active sources are fused by an exact
arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    constant,
    matmul,
    parameter,
    pool,
    relu,
    reshape,
    transpose,
)
from .relation import (
    AttentionBlockParams,
    AttentionTrace,
    init_attention_block,
    s_trans_forward,
    t_trans_forward,
)

__all__ = [
    "PATH_VARIANTS",
    "SCENE_FUSION_MODES",
    "ModelConfig",
    "ActorTensor",
    "PathOutputs",
    "Predictions",
    "PathParams",
    "ModelParams",
    "build_model_params",
    "embed_features",
    "compose_st",
    "compose_ts",
    "compose_variant",
    "classify_heads",
    "scene_head",
    "forward_batch",
    "forward_model",
    "predict",
]

PATH_VARIANTS = ("ss", "tt", "st", "ts", "dual")
SCENE_FUSION_MODES = ("none", "early", "middle", "late")

# unit order per path id: "s" = spatial unit, "t" = temporal unit
_PATH_ORDERS = {"st": "st", "ts": "ts", "ss": "ss", "tt": "tt"}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches and sizes; class counts come from the dataset."""

    variant: str = "dual"
    scene_fusion: str = "late"
    feature_dim: int = 12  # raw per-actor feature width D
    scene_dim: int = 12
    model_dim: int = 64  # C
    embed_dim: int = 32  # E inside attention
    heads: int = 4
    ffn_dim: int = 64
    groups: int = 6
    actions: int = 4

    def __post_init__(self):
        if self.variant not in PATH_VARIANTS:
            raise ValueError(f"variant must be one of {PATH_VARIANTS}, got {self.variant!r}")
        if self.scene_fusion not in SCENE_FUSION_MODES:
            raise ValueError(f"scene_fusion must be one of {SCENE_FUSION_MODES}")
        if self.model_dim % 4:
            raise ValueError("model_dim must be divisible by 4 for the spatial encoding")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")

    @property
    def active_paths(self) -> tuple[str, ...]:
        return ("st", "ts") if self.variant == "dual" else (self.variant,)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "variant", "scene_fusion", "feature_dim", "scene_dim", "model_dim",
            "embed_dim", "heads", "ffn_dim", "groups", "actions")}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class ActorTensor:
    """One episode's actor block: features (K, N, C) and centers (K, N, 2)."""

    features: Tensor
    centers: np.ndarray

    def __post_init__(self):
        k, n, _ = self.features.shape
        if self.centers.shape != (k, n, 2):
            raise ValueError(f"centers {self.centers.shape} do not match features {self.features.shape}")
        if self.centers.min() < 0.0 or self.centers.max() > 1.0:
            raise ValueError("box centers outside [0, 1]^2")


@dataclass
class PathOutputs:
    """Enhanced actor features plus their frame-pooled video representations.

    ``enhanced`` is (..., K, N, C) and ``video`` the mean over the frame axis,
    (..., N, C). ``traces`` carries attention weights when tracing is on.
    """

    path: str
    enhanced: Tensor
    video: Tensor
    traces: list[AttentionTrace] = field(default_factory=list)


@dataclass
class Predictions:
    """Per-source logits and their fused means.

    Group sources are the active paths plus "scene" under late fusion; the
    fused tensors are exact arithmetic means over their sources.
    """

    group: dict[str, Tensor]
    individual: dict[str, Tensor]
    fused_group: Tensor
    fused_individual: Tensor


@dataclass
class PathParams:
    inner: AttentionBlockParams
    outer: AttentionBlockParams
    bridge_w: Tensor
    bridge_b: Tensor
    head_individual_w: Tensor
    head_individual_b: Tensor
    head_group_w: Tensor
    head_group_b: Tensor


@dataclass
class ModelParams:
    config: ModelConfig
    store: dict[str, Tensor]
    embed_w: Tensor
    embed_b: Tensor
    paths: dict[str, PathParams]
    scene_head_w: Tensor | None = None
    scene_head_b: Tensor | None = None
    scene_proj_w: Tensor | None = None
    scene_proj_b: Tensor | None = None


def build_model_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Initialise all weights for ``config`` from a seeded generator.

    Parameter names are unique and path prefixes keep the two paths of the
    dual variant fully disjoint (asserted).
    """
    rng = np.random.default_rng(seed)
    store: dict[str, Tensor] = {}
    c, e, h, f = config.model_dim, config.embed_dim, config.heads, config.ffn_dim

    def reg(name, t):
        if name in store:
            raise ValueError(f"duplicate parameter name {name!r}")
        store[name] = t
        return t

    embed_w = reg("embed.w", parameter((config.feature_dim, c), rng))
    embed_b = reg("embed.b", parameter(np.zeros(c)))

    paths: dict[str, PathParams] = {}
    for path in config.active_paths:
        before = set(store)
        inner = init_attention_block(rng, c, e, h, f, f"{path}.inner", store)
        outer = init_attention_block(rng, c, e, h, f, f"{path}.outer", store)
        pp = PathParams(
            inner=inner,
            outer=outer,
            bridge_w=reg(f"{path}.bridge.w", parameter((c, c), rng)),
            bridge_b=reg(f"{path}.bridge.b", parameter(np.zeros(c))),
            head_individual_w=reg(f"{path}.head.individual.w", parameter((c, config.actions), rng)),
            head_individual_b=reg(f"{path}.head.individual.b", parameter(np.zeros(config.actions))),
            head_group_w=reg(f"{path}.head.group.w", parameter((c, config.groups), rng)),
            head_group_b=reg(f"{path}.head.group.b", parameter(np.zeros(config.groups))),
        )
        added = set(store) - before
        assert all(name.startswith(f"{path}.") for name in added)
        paths[path] = pp

    mp = ModelParams(config=config, store=store, embed_w=embed_w, embed_b=embed_b, paths=paths)
    if config.scene_fusion == "late":
        mp.scene_head_w = reg("scene.head.w", parameter((config.scene_dim, config.groups), rng))
        mp.scene_head_b = reg("scene.head.b", parameter(np.zeros(config.groups)))
    elif config.scene_fusion in ("early", "middle"):
        mp.scene_proj_w = reg("scene.project.w", parameter((config.scene_dim, c), rng))
        mp.scene_proj_b = reg("scene.project.b", parameter(np.zeros(c)))
    return mp


def embed_features(features: Tensor | np.ndarray, params: ModelParams) -> Tensor:
    """Affine projection of raw (..., D) features to model width C."""
    x = features if isinstance(features, Tensor) else constant(np.asarray(features, dtype=np.float64))
    return matmul(x, params.embed_w) + params.embed_b


def _ensure_batched(features: Tensor, centers: np.ndarray) -> tuple[Tensor, np.ndarray, bool]:
    if features.ndim == 3:
        return reshape(features, (1,) + features.shape), centers[None], True
    return features, centers, False


def _run_spatial(x: Tensor, centers: np.ndarray, p: AttentionBlockParams,
                 zero_encoding: bool) -> tuple[Tensor, np.ndarray]:
    b, k, n, c = x.shape
    tokens = reshape(x, (b * k, n, c))
    out, attn = s_trans_forward(tokens, centers.reshape(b * k, n, 2), p, zero_encoding)
    return reshape(out, (b, k, n, c)), attn.reshape(b, k, p.heads, n, n)


def _run_temporal(x: Tensor, p: AttentionBlockParams,
                  zero_encoding: bool) -> tuple[Tensor, np.ndarray]:
    b, k, n, c = x.shape
    tokens = reshape(transpose(x, (0, 2, 1, 3)), (b * n, k, c))
    out, attn = t_trans_forward(tokens, p, zero_encoding)
    out = transpose(reshape(out, (b, n, k, c)), (0, 2, 1, 3))
    return out, attn.reshape(b, n, p.heads, k, k)


def _collect_traces(path: str, kind: str, attn: np.ndarray, traces: list) -> None:
    # attn is (B, K_or_N, heads, T, T); tag each leading slice with its index
    b = attn.shape[0]
    for bi in range(b):
        for i in range(attn.shape[1]):
            traces.append(AttentionTrace(path=path, unit=kind, index=i, weights=attn[bi, i]))


def _path_forward(
    features: Tensor,
    centers: np.ndarray,
    pp: PathParams,
    path: str,
    middle_add: Tensor | None = None,
    zero_encoding: bool = False,
    trace: bool = False,
) -> PathOutputs:
    """Shared skeleton of all path variants.

    outer_unit(x + relu(affine(inner_unit(x)))), with the optional middle
    scene term added to the residual sum before the outer unit.
    """
    order = _PATH_ORDERS[path]
    traces: list[AttentionTrace] = []

    def run(kind: str, x: Tensor, block: AttentionBlockParams) -> Tensor:
        if kind == "s":
            out, attn = _run_spatial(x, centers, block, zero_encoding)
        else:
            out, attn = _run_temporal(x, block, zero_encoding)
        if trace:
            _collect_traces(path, "spatial" if kind == "s" else "temporal", attn, traces)
        return out

    h1 = run(order[0], features, pp.inner)
    bridged = features + relu(matmul(h1, pp.bridge_w) + pp.bridge_b)
    if middle_add is not None:
        bridged = bridged + middle_add
    enhanced = run(order[1], bridged, pp.outer)
    video = pool(enhanced, axis=1, mode="mean")  # over the K frames
    return PathOutputs(path=path, enhanced=enhanced, video=video, traces=traces)


def compose_st(x: ActorTensor, pp: PathParams, trace: bool = False,
               zero_encoding: bool = False) -> PathOutputs:
    """Spatial-then-temporal path over one episode."""
    return compose_variant(x, pp, "st", trace=trace, zero_encoding=zero_encoding)


def compose_ts(x: ActorTensor, pp: PathParams, trace: bool = False,
               zero_encoding: bool = False) -> PathOutputs:
    """Temporal-then-spatial path over one episode."""
    return compose_variant(x, pp, "ts", trace=trace, zero_encoding=zero_encoding)


def compose_variant(x: ActorTensor, pp: PathParams, variant: str, trace: bool = False,
                    zero_encoding: bool = False) -> PathOutputs:
    """Any unit ordering by name: st, ts, and the single-order stacks ss, tt."""
    if variant not in _PATH_ORDERS:
        raise ValueError(f"unknown path variant {variant!r}")
    feats, centers, squeeze = _ensure_batched(x.features, x.centers)
    out = _path_forward(feats, centers, pp, variant, trace=trace, zero_encoding=zero_encoding)
    return _squeeze_outputs(out) if squeeze else out


def _squeeze_outputs(out: PathOutputs) -> PathOutputs:
    return PathOutputs(
        path=out.path,
        enhanced=reshape(out.enhanced, out.enhanced.shape[1:]),
        video=reshape(out.video, out.video.shape[1:]),
        traces=out.traces,
    )


def classify_heads(path_out: PathOutputs, pp: PathParams) -> tuple[Tensor, Tensor]:
    """Group and individual logits from one path's video representations.

    Individual logits apply an affine map per actor; group logits apply an
    affine map to the max-pool over actors, so duplicated actors cannot move
    the group prediction.
    """
    video = path_out.video  # (..., N, C)
    individual = matmul(video, pp.head_individual_w) + pp.head_individual_b
    pooled = pool(video, axis=video.ndim - 2, mode="max")
    group = matmul(pooled, pp.head_group_w) + pp.head_group_b if pooled.ndim == 2 else (
        reshape(matmul(reshape(pooled, (1, -1)), pp.head_group_w) + pp.head_group_b, (-1,)))
    return group, individual


def scene_head(scene: Tensor | np.ndarray, params: ModelParams) -> Tensor:
    """Group logits from frame-level scene features: mean over frames, affine."""
    s = scene if isinstance(scene, Tensor) else constant(np.asarray(scene, dtype=np.float64))
    pooled = pool(s, axis=s.ndim - 2, mode="mean")
    if pooled.ndim == 1:
        return reshape(matmul(reshape(pooled, (1, -1)), params.scene_head_w) + params.scene_head_b, (-1,))
    return matmul(pooled, params.scene_head_w) + params.scene_head_b


def _fuse(sources: list[Tensor]) -> Tensor:
    total = sources[0]
    for s in sources[1:]:
        total = total + s
    return total * (1.0 / len(sources))


def _scene_projection(scene: np.ndarray, params: ModelParams) -> Tensor:
    # (B, K, S) -> (B, K, 1, C), broadcast over actors when added
    proj = matmul(constant(scene), params.scene_proj_w) + params.scene_proj_b
    b, k, c = proj.shape
    return reshape(proj, (b, k, 1, c))


def forward_batch(
    features: np.ndarray,
    centers: np.ndarray,
    scene: np.ndarray,
    params: ModelParams,
    trace: bool = False,
) -> tuple[Predictions, dict[str, PathOutputs]]:
    """Run the configured paths over a batch.

    ``features`` is raw (B, K, N, D); the embedding to C happens here.
    Returns batched Predictions (group logits (B, G), individual (B, N, A))
    and the per-path outputs for the contrastive losses.
    """
    cfg = params.config
    scene = np.asarray(scene, dtype=np.float64)
    x = embed_features(np.asarray(features, dtype=np.float64), params)
    if cfg.scene_fusion == "early":
        x = x + _scene_projection(scene, params)
    middle = _scene_projection(scene, params) if cfg.scene_fusion == "middle" else None

    path_outputs: dict[str, PathOutputs] = {}
    group_logits: dict[str, Tensor] = {}
    individual_logits: dict[str, Tensor] = {}
    for path in cfg.active_paths:
        po = _path_forward(x, centers, params.paths[path], path, middle_add=middle, trace=trace)
        path_outputs[path] = po
        group_logits[path], individual_logits[path] = classify_heads(po, params.paths[path])
    if cfg.scene_fusion == "late":
        group_logits["scene"] = scene_head(scene, params)

    preds = Predictions(
        group=group_logits,
        individual=individual_logits,
        fused_group=_fuse(list(group_logits.values())),
        fused_individual=_fuse(list(individual_logits.values())),
    )
    return preds, path_outputs


def forward_model(
    x: ActorTensor,
    scene: np.ndarray,
    params: ModelParams,
    trace: bool = False,
) -> tuple[Predictions, dict[str, PathOutputs]]:
    """Single-episode forward over already-embedded actor features.

    ``x.features`` is (K, N, C); ``scene`` is (K, S). Logit shapes come back
    squeezed: group (G,), individual (N, A).
    """
    cfg = params.config
    if x.features.shape[-1] != cfg.model_dim:
        raise ValueError(f"actor features have width {x.features.shape[-1]}, config says {cfg.model_dim}")
    scene = np.asarray(scene, dtype=np.float64)
    feats = reshape(x.features, (1,) + x.features.shape)
    centers = x.centers[None]
    scene_b = scene[None]

    if cfg.scene_fusion == "early":
        feats = feats + _scene_projection(scene_b, params)
    middle = _scene_projection(scene_b, params) if cfg.scene_fusion == "middle" else None

    path_outputs: dict[str, PathOutputs] = {}
    group_logits: dict[str, Tensor] = {}
    individual_logits: dict[str, Tensor] = {}
    for path in cfg.active_paths:
        po = _path_forward(feats, centers, params.paths[path], path, middle_add=middle, trace=trace)
        path_outputs[path] = _squeeze_outputs(po)
        g, ind = classify_heads(po, params.paths[path])
        group_logits[path] = reshape(g, (cfg.groups,))
        individual_logits[path] = reshape(ind, ind.shape[1:])
    if cfg.scene_fusion == "late":
        group_logits["scene"] = reshape(scene_head(scene_b, params), (cfg.groups,))

    preds = Predictions(
        group=group_logits,
        individual=individual_logits,
        fused_group=_fuse(list(group_logits.values())),
        fused_individual=_fuse(list(individual_logits.values())),
    )
    return preds, path_outputs


def predict(preds: Predictions) -> tuple[int, np.ndarray]:
    """Argmax classes from the fused logits; ties break to the lowest index."""
    group = int(np.argmax(preds.fused_group.data))
    individual = np.argmax(preds.fused_individual.data, axis=-1)
    return group, individual
