"""Training, evaluation, and metrics logging.

One training step runs the batched forward, applies the classification loss
on the fused logits (group plus weighted individual), adds the weighted
contrastive terms when both paths are active, backpropagates, and takes one
Adam step on the stepped learning rate. Logs are line-delimited JSON records
written without timestamps so a fixed seed reproduces them byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward, cross_entropy_with_logits, reshape, zero_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import ContrastiveWeights, LossBreakdown, actor_contrastive_loss
from .dataio import Episode, read_dataset
from .model import ModelConfig, ModelParams, build_model_params, forward_batch
from .optim import AdamState, adam_step
from .synthetic import stratified_subsample

__all__ = [
    "RunConfig",
    "MetricsRecord",
    "TrainResult",
    "NumericalFailure",
    "schedule_lr",
    "epoch_permutation",
    "batch_arrays",
    "train",
    "evaluate",
    "load_model",
]


class NumericalFailure(RuntimeError):
    """Loss or gradients left the finite domain; training was aborted."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; JSON keys mirror the field names."""

    model: ModelConfig = field(default_factory=ModelConfig)
    weights: ContrastiveWeights = field(default_factory=ContrastiveWeights)
    individual_weight: float = 1.0  # balance of the individual-action term
    lr: float = 1e-3
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (15, 25)
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    data_ratio: float = 1.0
    train_path: str = ""
    test_path: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self):
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if self.decay_epochs and self.decay_epochs[-1] >= self.epochs:
            raise ValueError("decay_epochs must all be < epochs")
        if not 0.0 < self.data_ratio <= 1.0:
            raise ValueError("data_ratio must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "weights": {
                "frame_frame": self.weights.frame_frame,
                "frame_video": self.weights.frame_video,
                "video_video": self.weights.video_video,
            },
            "individual_weight": self.individual_weight,
            "lr": self.lr,
            "decay_factor": self.decay_factor,
            "decay_epochs": list(self.decay_epochs),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "data_ratio": self.data_ratio,
            "train_path": self.train_path,
            "test_path": self.test_path,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "model" in kwargs:
            kwargs["model"] = ModelConfig.from_dict(kwargs["model"])
        if "weights" in kwargs:
            kwargs["weights"] = ContrastiveWeights(**kwargs["weights"])
        if "decay_epochs" in kwargs:
            kwargs["decay_epochs"] = tuple(kwargs["decay_epochs"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in kwargs.items() if k in known})

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    group_accuracy: float
    individual_accuracy: float
    mpca: float
    per_class_accuracy: list[float]
    losses: LossBreakdown
    lr: float

    def to_json(self) -> str:
        rec = {
            "epoch": self.epoch,
            "split": self.split,
            "group_accuracy": self.group_accuracy,
            "individual_accuracy": self.individual_accuracy,
            "mpca": self.mpca,
            "per_class_accuracy": self.per_class_accuracy,
            "lr": self.lr,
        }
        rec.update(self.losses.to_dict())
        return json.dumps(rec, sort_keys=True)


@dataclass
class TrainResult:
    config: RunConfig
    checkpoint_path: Path
    metrics_path: Path
    steps_path: Path
    final_test: MetricsRecord
    history: list[MetricsRecord]


def schedule_lr(initial: float, factor: float, decay_epochs, epoch: int) -> float:
    """initial * factor^(number of decay epochs already passed)."""
    passed = sum(1 for e in decay_epochs if epoch >= e)
    return initial * factor ** passed


def epoch_permutation(seed: int, epoch: int, count: int) -> np.ndarray:
    """Counter-based shuffle so data order depends only on (seed, epoch)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(
        entropy=seed, spawn_key=(0xE0C, epoch))))
    return rng.permutation(count)


def batch_arrays(episodes: list[Episode]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack episodes into (B, ...) float64 arrays plus label vectors."""
    feats = np.stack([e.features for e in episodes]).astype(np.float64)
    centers = np.stack([e.centers for e in episodes]).astype(np.float64)
    scene = np.stack([e.scene for e in episodes]).astype(np.float64)
    y_group = np.array([e.group_label for e in episodes], dtype=np.int64)
    y_indiv = np.stack([e.individual_labels for e in episodes]).astype(np.int64)
    return feats, centers, scene, y_group, y_indiv


def _make_breakdown(ff: float, fv: float, vv: float, cls: float,
                    weights: ContrastiveWeights, batch_size: int) -> LossBreakdown:
    # same left-fold association as the tensor graph, so the additive
    # invariants hold bit-exactly on every logged record
    ff, fv, vv, cls = float(ff), float(fv), float(vv), float(cls)
    con = ff * weights.frame_frame + fv * weights.frame_video + vv * weights.video_video
    return LossBreakdown(frame_frame=ff, frame_video=fv, video_video=vv,
                         contrastive=con, classification=cls, total=cls + con,
                         batch_size=batch_size)


def _batch_loss(params: ModelParams, cfg: RunConfig, episodes: list[Episode]):
    """Forward one batch; returns (loss tensor, breakdown, fused predictions)."""
    feats, centers, scene, y_group, y_indiv = batch_arrays(episodes)
    preds, path_outputs = forward_batch(feats, centers, scene, params)
    b, n = y_indiv.shape
    a = cfg.model.actions
    l_group = cross_entropy_with_logits(preds.fused_group, y_group)
    l_indiv = cross_entropy_with_logits(reshape(preds.fused_individual, (b * n, a)),
                                        y_indiv.reshape(-1))
    l_cls = l_group + l_indiv * cfg.individual_weight

    if cfg.model.variant == "dual" and cfg.weights.active:
        l_con, parts = actor_contrastive_loss(path_outputs["st"], path_outputs["ts"], cfg.weights)
        total = l_cls + l_con
    else:
        parts = {"l_ff": 0.0, "l_fv": 0.0, "l_vv": 0.0}
        total = l_cls + Tensor(np.zeros(()))
    breakdown = _make_breakdown(parts["l_ff"], parts["l_fv"], parts["l_vv"],
                                l_cls.item(), cfg.weights, len(episodes))
    return total, breakdown, preds, (y_group, y_indiv)


def full_loss(params: ModelParams, cfg: RunConfig, episodes: list[Episode]) -> Tensor:
    """The complete training objective on one batch, for gradient checking."""
    return _batch_loss(params, cfg, episodes)[0]


def random_episodes(rng: np.random.Generator, count: int, frames: int, actors: int,
                    feature_dim: int, scene_dim: int, groups: int, actions: int) -> list[Episode]:
    """Well-formed random episodes for verification harnesses."""
    out = []
    for _ in range(count):
        out.append(Episode(
            features=rng.normal(0.0, 1.0, size=(frames, actors, feature_dim)).astype(np.float32),
            centers=rng.uniform(0.0, 1.0, size=(frames, actors, 2)).astype(np.float32),
            scene=rng.normal(0.0, 1.0, size=(frames, scene_dim)).astype(np.float32),
            group_label=int(rng.integers(groups)),
            individual_labels=rng.integers(0, actions, size=actors).astype(np.uint16),
        ))
    return out


def gradcheck_objective(frames: int = 3, actors: int = 4, model_dim: int = 16,
                        groups: int = 4, actions: int = 3, batch_size: int = 2,
                        seed: int = 0, step: float = 1e-5, tolerance: float = 1e-4):
    """Finite-difference check of the full objective over every parameter.

    Uses the dual variant with late scene fusion and unit contrastive
    weights, so every loss term contributes gradient.
    """
    from .gradcheck import finite_difference_check

    cfg = RunConfig(
        model=ModelConfig(variant="dual", scene_fusion="late", feature_dim=8, scene_dim=8,
                          model_dim=model_dim, embed_dim=8, heads=2, ffn_dim=16,
                          groups=groups, actions=actions),
        weights=ContrastiveWeights(1.0, 1.0, 1.0),
    )
    rng = np.random.default_rng(seed)
    episodes = random_episodes(rng, batch_size, frames, actors, 8, 8, groups, actions)
    params = build_model_params(cfg.model, seed=seed)
    return finite_difference_check(
        lambda: full_loss(params, cfg, episodes),
        params.store, step=step, tolerance=tolerance, seed=seed,
    )


def _accuracy_stats(group_logits, indiv_logits, y_group, y_indiv, groups: int):
    pred_g = np.argmax(group_logits, axis=1)
    pred_i = np.argmax(indiv_logits, axis=2)
    confusion = np.zeros((groups, groups), dtype=np.int64)
    for t, p in zip(y_group, pred_g):
        confusion[t, p] += 1
    return pred_g, pred_i, confusion


def _confusion_metrics(confusion: np.ndarray) -> tuple[float, float, list[float]]:
    support = confusion.sum(axis=1)
    correct = np.diag(confusion)
    present = support > 0
    per_class = np.zeros(len(support))
    per_class[present] = correct[present] / support[present]
    group_acc = float(correct.sum() / max(support.sum(), 1))
    mpca = float(per_class[present].mean()) if present.any() else 0.0
    return group_acc, mpca, [float(x) for x in per_class]


def evaluate(params: ModelParams, cfg: RunConfig, episodes: list[Episode],
             epoch: int = -1, split: str = "test", lr: float = 0.0,
             ) -> tuple[MetricsRecord, np.ndarray]:
    """Metrics over a whole split; returns the record and the confusion matrix."""
    groups = cfg.model.groups
    confusion = np.zeros((groups, groups), dtype=np.int64)
    indiv_hits = indiv_total = 0
    sums = np.zeros(4)  # ff, fv, vv, cls
    n_batches = 0
    for start in range(0, len(episodes), cfg.batch_size):
        chunk = episodes[start:start + cfg.batch_size]
        _, breakdown, preds, (y_group, y_indiv) = _batch_loss(params, cfg, chunk)
        _, pred_i, conf = _accuracy_stats(preds.fused_group.data, preds.fused_individual.data,
                                          y_group, y_indiv, groups)
        confusion += conf
        indiv_hits += int((pred_i == y_indiv).sum())
        indiv_total += y_indiv.size
        sums += [breakdown.frame_frame, breakdown.frame_video, breakdown.video_video,
                 breakdown.classification]
        n_batches += 1
    group_acc, mpca, per_class = _confusion_metrics(confusion)
    means = sums / n_batches
    losses = _make_breakdown(means[0], means[1], means[2], means[3],
                             cfg.weights, len(episodes))
    record = MetricsRecord(
        epoch=epoch, split=split, group_accuracy=group_acc,
        individual_accuracy=indiv_hits / max(indiv_total, 1),
        mpca=mpca, per_class_accuracy=per_class, losses=losses, lr=lr,
    )
    return record, confusion


def load_model(config_path, checkpoint_path) -> tuple[RunConfig, ModelParams]:
    """Rebuild a model from its run config and checkpoint.

    Raises ValueError listing missing/extra tensor names when the checkpoint
    does not match the configured architecture.
    """
    cfg = RunConfig.from_file(config_path)
    params = build_model_params(cfg.model, seed=cfg.seed)
    saved = load_checkpoint(checkpoint_path)
    missing = sorted(set(params.store) - set(saved))
    extra = sorted(set(saved) - set(params.store))
    if missing or extra:
        raise ValueError(f"checkpoint incompatible with config: missing {missing}, extra {extra}")
    for name, arr in saved.items():
        if params.store[name].data.shape != arr.shape:
            raise ValueError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                             f"expected {params.store[name].data.shape}")
        params.store[name].data[...] = arr
    return cfg, params


def train(cfg: RunConfig, quiet: bool = False) -> TrainResult:
    """Run the full schedule; writes metrics, per-step losses, and a checkpoint.

    Deterministic for a fixed config and seed. On a non-finite loss or
    gradient the run aborts with :class:`NumericalFailure`; the checkpoint on
    disk is the last finite epoch.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    _, train_eps = read_dataset(cfg.train_path)
    _, test_eps = read_dataset(cfg.test_path)
    if cfg.data_ratio < 1.0:
        labels = np.array([e.group_label for e in train_eps])
        keep = stratified_subsample(labels, cfg.data_ratio, cfg.seed)
        train_eps = [train_eps[i] for i in keep]

    params = build_model_params(cfg.model, seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    ckpt_path = out / "checkpoint.dai"
    metrics_path = out / "metrics.jsonl"
    steps_path = out / "steps.jsonl"
    history: list[MetricsRecord] = []
    step = 0

    with open(metrics_path, "w") as metrics_fh, open(steps_path, "w") as steps_fh:
        final_test = None
        for epoch in range(cfg.epochs):
            lr = schedule_lr(cfg.lr, cfg.decay_factor, cfg.decay_epochs, epoch)
            order = epoch_permutation(cfg.seed, epoch, len(train_eps))
            confusion = np.zeros((cfg.model.groups, cfg.model.groups), dtype=np.int64)
            indiv_hits = indiv_total = 0
            loss_sums = np.zeros(4)  # ff, fv, vv, cls
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                chunk = [train_eps[i] for i in order[start:start + cfg.batch_size]]
                total, breakdown, preds, (y_group, y_indiv) = _batch_loss(params, cfg, chunk)
                if not np.isfinite(breakdown.total):
                    raise NumericalFailure(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"last good checkpoint: {ckpt_path}")
                zero_grad(params.store.values())
                backward(total)
                try:
                    adam_step(params.store, state, lr=lr)
                except FloatingPointError as err:
                    raise NumericalFailure(
                        f"{err} at epoch {epoch} step {step}; "
                        f"last good checkpoint: {ckpt_path}") from err
                steps_fh.write(json.dumps(
                    {"step": step, "epoch": epoch, "lr": lr, **breakdown.to_dict()},
                    sort_keys=True) + "\n")
                _, pred_i, conf = _accuracy_stats(preds.fused_group.data,
                                                  preds.fused_individual.data,
                                                  y_group, y_indiv, cfg.model.groups)
                confusion += conf
                indiv_hits += int((pred_i == y_indiv).sum())
                indiv_total += y_indiv.size
                loss_sums += [breakdown.frame_frame, breakdown.frame_video, breakdown.video_video,
                              breakdown.classification]
                n_batches += 1
                step += 1

            group_acc, mpca, per_class = _confusion_metrics(confusion)
            means = loss_sums / n_batches
            train_record = MetricsRecord(
                epoch=epoch, split="train", group_accuracy=group_acc,
                individual_accuracy=indiv_hits / max(indiv_total, 1), mpca=mpca,
                per_class_accuracy=per_class,
                losses=_make_breakdown(means[0], means[1], means[2], means[3],
                                       cfg.weights, cfg.batch_size),
                lr=lr,
            )
            test_record, confusion_test = evaluate(params, cfg, test_eps,
                                                   epoch=epoch, split="test", lr=lr)
            metrics_fh.write(train_record.to_json() + "\n")
            metrics_fh.write(test_record.to_json() + "\n")
            history.extend([train_record, test_record])
            final_test = test_record
            save_checkpoint(ckpt_path, params.store)
            if not quiet:
                print(f"epoch {epoch:3d}  lr {lr:g}  train acc {group_acc:.3f}  "
                      f"test acc {test_record.group_accuracy:.3f}  "
                      f"loss {train_record.losses.total:.4f}")

        _write_per_class_csv(out / "per_class_accuracy.csv", final_test)
        np.savetxt(out / "confusion_matrix.csv", confusion_test, fmt="%d", delimiter=",")

    return TrainResult(config=cfg, checkpoint_path=ckpt_path, metrics_path=metrics_path,
                       steps_path=steps_path, final_test=final_test, history=history)


def _write_per_class_csv(path: Path, record: MetricsRecord) -> None:
    with open(path, "w") as fh:
        fh.write("class,accuracy\n")
        for cls, acc in enumerate(record.per_class_accuracy):
            fh.write(f"{cls},{acc}\n")
