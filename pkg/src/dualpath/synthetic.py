"""Synthetic group-activity benchmark.

Episodes place N actors on a canvas and move them over K frames. Each class
is an :class:`ActivityScript`: a target formation (box centers at the final
frame), a motion profile (per-actor step sequences shared across formations),
and a per-actor action assignment. The default six-class benchmark is built
so that

* classes 0/1 differ only in formation (identical motions and actions),
* classes 2/3 differ only in motion order (identical formations; the two
  motion profiles traverse the same start and end points),
* classes 4/5 differ only jointly: both draw the same formation pool and the
  same motion pool, but pair them oppositely.

Actor features concatenate position, velocity, a noisy action one-hot, and
class-independent clutter. Scene features are the per-frame mean actor
feature plus clutter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataio import DatasetHeader, Episode, write_dataset

__all__ = [
    "ActivityScript",
    "OracleReport",
    "default_scripts",
    "script_summaries",
    "generate_episode",
    "generate_dataset",
    "stratified_subsample",
    "oracle_probe",
    "DEFAULT_NOISE",
    "DIAGNOSTIC_PAIRS",
]

DEFAULT_NOISE = 0.1

# (kind, (class_a, class_b)) pairs the probe reports on
DIAGNOSTIC_PAIRS = (("spatial", (0, 1)), ("temporal", (2, 3)), ("joint", (4, 5)))

# magnitudes chosen so that all trajectories stay inside [0, 1]^2 without
# clamping at zero noise (formation radius + travel + translation < 0.5)
_TRANSLATION = 0.06
# sigma per unit of noise level; trajectory jitter lands on the centers,
# measurement noise on every feature channel
_CENTER_JITTER = 0.5
_FEATURE_NOISE = 3.5
_CLUTTER_SCALE = 0.4
_SCENE_CLUTTER = 2.0


@dataclass(frozen=True)
class ActivityScript:
    """One group activity class: formation/motion combos plus actor actions.

    ``combos`` lists (formation, motion) pairs the class may realise; one
    entry for plain classes, two for the jointly-defined pair. ``formation``
    is (N, 2) final centers, ``motion`` is (K-1, N, 2) step vectors walked
    toward the formation. ``actions`` assigns an action id per actor slot.
    """

    class_id: int
    name: str
    combos: tuple[tuple[np.ndarray, np.ndarray], ...]
    actions: tuple[int, ...]
    description: str = ""


def _hexagon(radius: float, n: int) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(n) / n
    return 0.5 + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _pairs_formation(n: int) -> np.ndarray:
    # n/2 tight pairs on a triangle of cluster centers
    centers = _hexagon(0.20, n // 2)
    offsets = np.array([[0.05, 0.02], [-0.05, -0.02]])
    return np.concatenate([c + offsets for c in centers], axis=0)[:n]


def _line_formation(n: int) -> np.ndarray:
    xs = np.linspace(0.26, 0.74, n)
    return np.stack([xs, np.full(n, 0.5)], axis=1)


def _grid_formation(n: int) -> np.ndarray:
    cols = (n + 1) // 2
    xs = np.linspace(0.34, 0.66, cols)
    pts = [(x, y) for y in (0.42, 0.58) for x in xs]
    return np.array(pts[:n])


def _wedge_formation(n: int) -> np.ndarray:
    half = n // 2
    left = np.stack([np.linspace(0.30, 0.48, half), np.linspace(0.64, 0.34, half)], axis=1)
    right = np.stack([np.linspace(0.52, 0.70, n - half), np.linspace(0.34, 0.64, n - half)], axis=1)
    return np.concatenate([left, right], axis=0)


def _radial_dirs(n: int) -> np.ndarray:
    # fixed per-slot directions, independent of the formation in use
    ang = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _steps_from_speeds(speeds, n: int, dirs: np.ndarray | None = None) -> np.ndarray:
    d = _radial_dirs(n) if dirs is None else dirs
    return np.stack([s * d for s in speeds], axis=0)  # (K-1, N, 2)


def default_scripts(k: int = 3, n: int = 6, actions: int = 4) -> list[ActivityScript]:
    """The six-class diagnostic benchmark described in the module docstring."""
    if k < 2:
        raise ValueError("the default benchmark needs at least 2 frames")
    steps = k - 1
    even = np.full(steps, 0.18 / steps)
    slow_fast = np.linspace(0.05, 0.16, steps)
    slow_fast *= 0.18 / slow_fast.sum()
    sweep_dir = np.broadcast_to(np.array([1.0, 0.0]), (n, 2))

    converge = _steps_from_speeds(even, n)
    accel = _steps_from_speeds(slow_fast, n)
    decel = accel[::-1].copy()
    sweep = _steps_from_speeds(np.full(steps, 0.13 / steps), n, sweep_dir)
    scatter = -_steps_from_speeds(np.full(steps, 0.15 / steps), n)

    pairs_f, ring_f = _pairs_formation(n), _hexagon(0.22, n)
    line_f, grid_f, wedge_f = _line_formation(n), _grid_formation(n), _wedge_formation(n)

    act = lambda *ids: tuple(ids[i % len(ids)] for i in range(n))
    return [
        ActivityScript(0, "huddle", ((pairs_f, converge),), act(0, 1),
                       "paired clusters, even inward approach"),
        ActivityScript(1, "circle", ((ring_f, converge),), act(0, 1),
                       "ring formation, even inward approach"),
        ActivityScript(2, "surge", ((line_f, accel),), act(2, 3),
                       "line formation, slow-then-fast approach"),
        ActivityScript(3, "brake", ((line_f, decel),), act(2, 3),
                       "line formation, fast-then-slow approach"),
        ActivityScript(4, "drill", ((grid_f, sweep), (wedge_f, scatter)), act(1, 2, 3, 0),
                       "grid+sweep or wedge+scatter"),
        ActivityScript(5, "scramble", ((grid_f, scatter), (wedge_f, sweep)), act(1, 2, 3, 0),
                       "grid+scatter or wedge+sweep"),
    ]


def script_summaries(scripts) -> list[dict]:
    return [
        {"class_id": s.class_id, "name": s.name, "combos": len(s.combos),
         "actions": list(s.actions), "description": s.description}
        for s in scripts
    ]


def _trajectory(formation: np.ndarray, motion: np.ndarray, k: int) -> np.ndarray:
    """(K, N, 2) positions ending at the formation."""
    pos = np.empty((k, formation.shape[0], 2))
    pos[-1] = formation
    for j in range(k - 2, -1, -1):
        pos[j] = pos[j + 1] - motion[j]
    return pos


def generate_episode(
    script: ActivityScript,
    noise: float,
    rng: np.random.Generator,
    k: int,
    feature_dim: int,
    scene_dim: int,
    actions: int,
) -> Episode:
    """One labelled episode; fully determined by the generator state."""
    if noise < 0:
        raise ValueError("noise must be >= 0")
    n = script.combos[0][0].shape[0]
    formation, motion = script.combos[rng.integers(len(script.combos))]
    perm = rng.permutation(n)
    shift = rng.uniform(-_TRANSLATION, _TRANSLATION, size=2)

    clean = _trajectory(formation, motion, k)[:, perm, :] + shift
    centers = clean + rng.normal(0.0, _CENTER_JITTER * noise, size=clean.shape)
    centers = np.clip(centers, 0.0, 1.0)

    velocity = np.empty_like(centers)
    velocity[:-1] = np.diff(centers, axis=0)
    velocity[-1] = velocity[-2] if k > 1 else 0.0

    labels = np.asarray(script.actions, dtype=np.uint16)[perm]
    onehot = np.eye(actions)[labels][None].repeat(k, axis=0)

    clutter_dim = feature_dim - 4 - actions
    if clutter_dim < 0:
        raise ValueError(f"feature_dim {feature_dim} too small for 4 + {actions} signal channels")
    clutter = rng.normal(0.0, _CLUTTER_SCALE, size=(k, n, clutter_dim))
    features = np.concatenate([centers, velocity, onehot, clutter], axis=2)
    features += rng.normal(0.0, _FEATURE_NOISE * noise, size=features.shape)

    scene = features.mean(axis=1)
    scene = np.concatenate([scene, np.zeros((k, max(0, scene_dim - feature_dim)))], axis=1)
    scene = scene[:, :scene_dim] + rng.normal(0.0, _SCENE_CLUTTER * noise, size=(k, scene_dim))

    return Episode(
        features=features.astype(np.float32),
        centers=centers.astype(np.float32),
        scene=scene.astype(np.float32),
        group_label=script.class_id,
        individual_labels=labels,
    )


_SPLIT_KEY = {"train": 0, "test": 1}


def _episode_seed(master: int, split: str, class_id: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(_SPLIT_KEY[split], class_id, index))


def generate_dataset(
    scripts: list[ActivityScript],
    episodes_per_class: int,
    train_path,
    test_path,
    seed: int = 0,
    noise: float = DEFAULT_NOISE,
    train_fraction: float = 0.75,
    k: int = 3,
    feature_dim: int = 12,
    scene_dim: int = 12,
    actions: int = 4,
) -> tuple[DatasetHeader, DatasetHeader]:
    """Write class-balanced train and test files with disjoint episode seeds."""
    if episodes_per_class < 1:
        raise ValueError("episodes_per_class must be >= 1")
    n = scripts[0].combos[0][0].shape[0]
    n_train = max(1, round(episodes_per_class * train_fraction))
    n_test = episodes_per_class - n_train
    if n_test < 1:
        raise ValueError("train_fraction leaves no test episodes")

    seen: set[tuple] = set()
    headers = []
    for split, path, count in (("train", train_path, n_train), ("test", test_path, n_test)):
        episodes = []
        for script in scripts:
            for i in range(count):
                ss = _episode_seed(seed, split, script.class_id, i)
                key = (split, script.class_id, i)
                assert key not in seen
                seen.add(key)
                rng = np.random.Generator(np.random.Philox(ss))
                episodes.append(generate_episode(script, noise, rng, k, feature_dim, scene_dim, actions))
        header = DatasetHeader(
            frames=k, actors=n, feature_dim=feature_dim, scene_dim=scene_dim,
            groups=len(scripts), actions=actions, episodes=len(episodes), seed=seed,
        )
        write_dataset(path, header, episodes, metadata={"split": split, "noise": noise,
                                                        "scripts": script_summaries(scripts)})
        headers.append(header)
    return tuple(headers)


def stratified_subsample(labels: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """Indices of a class-balanced subset; subsets are nested across ratios.

    Each class's episodes are put in a seeded random order once; a ratio-r
    subset takes the first ceil(r * count) of that order, so smaller ratios
    are always contained in larger ones for the same seed.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    labels = np.asarray(labels)
    keep: list[np.ndarray] = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        order = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(int(cls),)))
        ).permutation(len(idx))
        take = int(np.ceil(ratio * len(idx)))
        keep.append(idx[order[:take]])
    return np.sort(np.concatenate(keep))


# ---------------------------------------------------------------------------
# nearest-template oracles
# ---------------------------------------------------------------------------

def _recenter(points: np.ndarray) -> np.ndarray:
    return points - points.mean(axis=0, keepdims=True)


def _assignment_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Min-cost matching between two (N, F) descriptor sets."""
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _spatial_cost(episode: Episode, script: ActivityScript) -> float:
    final = _recenter(episode.centers[-1].astype(np.float64))
    return min(_assignment_cost(final, _recenter(f)) for f, _ in script.combos)


def _temporal_cost(episode: Episode, script: ActivityScript) -> float:
    c = episode.centers.astype(np.float64)
    steps = np.diff(c, axis=0).transpose(1, 0, 2).reshape(c.shape[1], -1)
    return min(_assignment_cost(steps, m.transpose(1, 0, 2).reshape(c.shape[1], -1))
               for _, m in script.combos)


def _joint_cost(episode: Episode, script: ActivityScript) -> float:
    c = episode.centers.astype(np.float64)
    k, n, _ = c.shape
    desc = (c - c[-1].mean(axis=0, keepdims=True)).transpose(1, 0, 2).reshape(n, -1)
    best = np.inf
    for formation, motion in script.combos:
        template = _trajectory(formation, motion, k)
        template = template - template[-1].mean(axis=0, keepdims=True)
        best = min(best, _assignment_cost(desc, template.transpose(1, 0, 2).reshape(n, -1)))
    return best


@dataclass
class OracleReport:
    """Accuracies of the three cheap oracles, overall and on diagnostic pairs."""

    overall: dict[str, float]
    pair_accuracy: dict[str, dict[str, float]]  # pair kind -> oracle -> accuracy

    def format_table(self) -> str:
        oracles = ("spatial", "temporal", "joint")
        lines = [f"{'subset':<16}" + "".join(f"{o:>10}" for o in oracles)]
        lines.append(f"{'overall':<16}" + "".join(f"{self.overall[o]:>10.3f}" for o in oracles))
        for kind, accs in self.pair_accuracy.items():
            lines.append(f"{'pair ' + kind:<16}" + "".join(f"{accs[o]:>10.3f}" for o in oracles))
        return "\n".join(lines)


def oracle_probe(episodes: list[Episode], scripts: list[ActivityScript]) -> OracleReport:
    """Nearest-template classification from centers alone.

    The spatial oracle sees only the final-frame formation, the temporal
    oracle only per-actor step sequences (actor-order agnostic), the joint
    oracle whole recentered trajectories. Pair accuracies restrict both the
    episodes and the candidate classes to one diagnostic pair.
    """
    cost_fns = {"spatial": _spatial_cost, "temporal": _temporal_cost, "joint": _joint_cost}
    labels = np.array([e.group_label for e in episodes])
    costs = {
        name: np.array([[fn(e, s) for s in scripts] for e in episodes])
        for name, fn in cost_fns.items()
    }
    overall = {name: float((c.argmin(axis=1) == labels).mean()) for name, c in costs.items()}
    pair_accuracy: dict[str, dict[str, float]] = {}
    for kind, (a, b) in DIAGNOSTIC_PAIRS:
        sel = np.flatnonzero((labels == a) | (labels == b))
        accs = {}
        for name, c in costs.items():
            restricted = c[np.ix_(sel, [a, b])]
            picked = np.where(restricted[:, 0] <= restricted[:, 1], a, b)
            accs[name] = float((picked == labels[sel]).mean()) if len(sel) else float("nan")
        pair_accuracy[kind] = accs
    return OracleReport(overall=overall, pair_accuracy=pair_accuracy)
