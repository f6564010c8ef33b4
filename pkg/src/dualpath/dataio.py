"""Binary episode dataset format with a bit-exact round trip.

Layout, all little-endian:
  magic "GARD", version u32, K u32, N u32, D u32, S u32, G u32, A u32,
  episode count u64, generator seed u64;
  then per episode: features (K*N*D f32), centers (K*N*2 f32),
  scene (K*S f32), group label u16, N individual labels u16.

A companion ``<path>.meta.json`` echoes the header and records the activity
scripts for human inspection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["DatasetError", "DatasetHeader", "Episode", "write_dataset", "read_dataset", "MAGIC", "VERSION"]

MAGIC = b"GARD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIIQQ")


class DatasetError(ValueError):
    """Malformed dataset file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"{message}{where} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class DatasetHeader:
    frames: int
    actors: int
    feature_dim: int
    scene_dim: int
    groups: int
    actions: int
    episodes: int
    seed: int

    def __post_init__(self):
        for name in ("frames", "actors", "feature_dim", "scene_dim", "groups", "actions", "episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"header field {name} must be positive")

    def to_dict(self) -> dict:
        return {
            "frames": self.frames, "actors": self.actors, "feature_dim": self.feature_dim,
            "scene_dim": self.scene_dim, "groups": self.groups, "actions": self.actions,
            "episodes": self.episodes, "seed": self.seed,
        }


@dataclass
class Episode:
    """One sample: float32 payloads plus integer labels."""

    features: np.ndarray  # (K, N, D) float32
    centers: np.ndarray  # (K, N, 2) float32
    scene: np.ndarray  # (K, S) float32
    group_label: int
    individual_labels: np.ndarray  # (N,) uint16

    def validate(self, header: DatasetHeader) -> None:
        k, n, d, s = header.frames, header.actors, header.feature_dim, header.scene_dim
        if self.features.shape != (k, n, d):
            raise ValueError(f"features {self.features.shape} != header ({k}, {n}, {d})")
        if self.centers.shape != (k, n, 2):
            raise ValueError(f"centers {self.centers.shape} != header ({k}, {n}, 2)")
        if self.scene.shape != (k, s):
            raise ValueError(f"scene {self.scene.shape} != header ({k}, {s})")
        if not 0 <= self.group_label < header.groups:
            raise ValueError(f"group label {self.group_label} outside [0, {header.groups})")
        if self.individual_labels.shape != (n,):
            raise ValueError(f"expected {n} individual labels, got {self.individual_labels.shape}")
        if self.individual_labels.min() < 0 or self.individual_labels.max() >= header.actions:
            raise ValueError(f"individual label outside [0, {header.actions})")


def write_dataset(path, header: DatasetHeader, episodes: list[Episode],
                  metadata: dict | None = None) -> None:
    path = Path(path)
    if header.episodes != len(episodes):
        raise ValueError(f"header says {header.episodes} episodes, got {len(episodes)}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, header.frames, header.actors,
                              header.feature_dim, header.scene_dim, header.groups,
                              header.actions, header.episodes, header.seed))
        for ep in episodes:
            ep.validate(header)
            fh.write(np.ascontiguousarray(ep.features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(ep.centers, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(ep.scene, dtype="<f4").tobytes())
            fh.write(struct.pack("<H", ep.group_label))
            fh.write(np.ascontiguousarray(ep.individual_labels, dtype="<u2").tobytes())
    meta = {"header": header.to_dict()}
    if metadata:
        meta.update(metadata)
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _take(buf: bytes, offset: int, count: int, what: str, path) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise DatasetError(f"truncated while reading {what}", offset, path)
    return buf[offset:offset + count], offset + count


def read_dataset(path) -> tuple[DatasetHeader, list[Episode]]:
    path = Path(path)
    buf = path.read_bytes()
    raw, offset = _take(buf, 0, _HEADER.size, "header", path)
    magic, version, k, n, d, s, g, a, count, seed = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}", 4, path)
    try:
        header = DatasetHeader(frames=k, actors=n, feature_dim=d, scene_dim=s,
                               groups=g, actions=a, episodes=count, seed=seed)
    except ValueError as err:
        raise DatasetError(str(err), 4, path) from err

    episodes = []
    for i in range(count):
        feat_raw, offset = _take(buf, offset, 4 * k * n * d, f"features of episode {i}", path)
        cent_raw, offset = _take(buf, offset, 4 * k * n * 2, f"centers of episode {i}", path)
        scene_raw, offset = _take(buf, offset, 4 * k * s, f"scene of episode {i}", path)
        label_raw, offset = _take(buf, offset, 2, f"group label of episode {i}", path)
        ind_raw, offset = _take(buf, offset, 2 * n, f"individual labels of episode {i}", path)
        ep = Episode(
            features=np.frombuffer(feat_raw, dtype="<f4").reshape(k, n, d).copy(),
            centers=np.frombuffer(cent_raw, dtype="<f4").reshape(k, n, 2).copy(),
            scene=np.frombuffer(scene_raw, dtype="<f4").reshape(k, s).copy(),
            group_label=struct.unpack("<H", label_raw)[0],
            individual_labels=np.frombuffer(ind_raw, dtype="<u2").copy(),
        )
        try:
            ep.validate(header)
        except ValueError as err:
            raise DatasetError(f"episode {i}: {err}", offset, path) from err
        episodes.append(ep)
    if offset != len(buf):
        raise DatasetError(f"{len(buf) - offset} trailing bytes after last episode", offset, path)
    return header, episodes
