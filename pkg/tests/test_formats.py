"""Checkpoint and dataset container round trips and corruption handling."""

import numpy as np
import pytest

from dualpath.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dualpath.dataio import DatasetError, DatasetHeader, Episode, read_dataset, write_dataset


def _episodes(header, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(header.episodes):
        out.append(Episode(
            features=rng.normal(size=(header.frames, header.actors, header.feature_dim)).astype(np.float32),
            centers=rng.uniform(size=(header.frames, header.actors, 2)).astype(np.float32),
            scene=rng.normal(size=(header.frames, header.scene_dim)).astype(np.float32),
            group_label=int(rng.integers(header.groups)),
            individual_labels=rng.integers(0, header.actions, header.actors).astype(np.uint16),
        ))
    return out


@pytest.fixture
def header():
    return DatasetHeader(frames=3, actors=4, feature_dim=6, scene_dim=5,
                         groups=4, actions=3, episodes=5, seed=17)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        tensors = {
            "a.w": rng.normal(size=(3, 4)),
            "b.bias": rng.normal(size=7),
            "deep.name.with.dots": rng.normal(size=(2, 2, 2)),
        }
        path = tmp_path / "model.dai"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])
        # writing the loaded dict again reproduces the same bytes
        path2 = tmp_path / "model2.dai"
        save_checkpoint(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.dai"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_truncation_reports_offset(self, tmp_path):
        p = tmp_path / "x.dai"
        save_checkpoint(p, {"w": np.ones((2, 2))})
        raw = p.read_bytes()
        p.write_bytes(raw[:-5])
        with pytest.raises(CheckpointError, match="offset"):
            load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "x.dai"
        save_checkpoint(p, {"w": np.ones(1)})
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)


class TestDatasetFormat:
    def test_round_trip(self, tmp_path, header):
        episodes = _episodes(header)
        path = tmp_path / "d.gard"
        write_dataset(path, header, episodes)
        h2, eps2 = read_dataset(path)
        assert h2 == header
        for a, b in zip(episodes, eps2):
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.centers, b.centers)
            assert np.array_equal(a.scene, b.scene)
            assert a.group_label == b.group_label
            assert np.array_equal(a.individual_labels, b.individual_labels)
        # byte-identical re-write
        path2 = tmp_path / "d2.gard"
        write_dataset(path2, h2, eps2)
        assert path.read_bytes() == path2.read_bytes()

    def test_metadata_companion_written(self, tmp_path, header):
        path = tmp_path / "d.gard"
        write_dataset(path, header, _episodes(header), metadata={"note": "hello"})
        meta = (tmp_path / "d.gard.meta.json").read_text()
        assert '"note": "hello"' in meta
        assert '"episodes": 5' in meta

    def test_truncation_names_offset(self, tmp_path, header):
        path = tmp_path / "d.gard"
        write_dataset(path, header, _episodes(header))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 3])
        with pytest.raises(DatasetError, match=r"byte offset \d+"):
            read_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.gard"
        path.write_bytes(b"XXXX" + b"\x00" * 60)
        with pytest.raises(DatasetError, match="magic"):
            read_dataset(path)

    def test_header_payload_mismatch(self, tmp_path, header):
        # header claims more episodes than the payload carries
        path = tmp_path / "d.gard"
        write_dataset(path, header, _episodes(header))
        raw = bytearray(path.read_bytes())
        raw[32:40] = (header.episodes + 3).to_bytes(8, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="truncated"):
            read_dataset(path)

    def test_trailing_garbage_rejected(self, tmp_path, header):
        path = tmp_path / "d.gard"
        write_dataset(path, header, _episodes(header))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(DatasetError, match="trailing"):
            read_dataset(path)

    def test_episode_shape_validation(self, header):
        eps = _episodes(header)
        eps[0].features = eps[0].features[:, :2]
        with pytest.raises(ValueError, match="features"):
            eps[0].validate(header)

    def test_header_field_positivity(self):
        with pytest.raises(ValueError):
            DatasetHeader(frames=0, actors=1, feature_dim=1, scene_dim=1,
                          groups=1, actions=1, episodes=1, seed=0)
