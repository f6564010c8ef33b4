"""Path composition, classifier heads, fusion, and prediction."""

import numpy as np
import pytest

from dualpath.autodiff import Tensor, tsum
from dualpath.gradcheck import finite_difference_check
from dualpath.model import (
    ActorTensor,
    ModelConfig,
    build_model_params,
    classify_heads,
    compose_st,
    compose_ts,
    compose_variant,
    embed_features,
    forward_batch,
    forward_model,
    predict,
    scene_head,
)

CFG = ModelConfig(variant="dual", scene_fusion="late", feature_dim=8, scene_dim=8,
                  model_dim=16, embed_dim=8, heads=2, ffn_dim=16, groups=4, actions=3)


def make_actor(rng, k=3, n=4, c=16):
    return ActorTensor(features=Tensor(rng.normal(size=(k, n, c))),
                       centers=rng.uniform(size=(k, n, 2)))


@pytest.fixture
def params():
    return build_model_params(CFG, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestConfig:
    def test_variant_validation(self):
        with pytest.raises(ValueError, match="variant"):
            ModelConfig(variant="sz")

    def test_scene_fusion_validation(self):
        with pytest.raises(ValueError, match="scene_fusion"):
            ModelConfig(scene_fusion="sideways")

    def test_dual_paths_have_disjoint_parameters(self, params):
        st_names = {n for n in params.store if n.startswith("st.")}
        ts_names = {n for n in params.store if n.startswith("ts.")}
        assert st_names and ts_names and not (st_names & ts_names)

    def test_round_trip_dict(self):
        assert ModelConfig.from_dict(CFG.to_dict()) == CFG


class TestPaths:
    def test_shape_preserved(self, params, rng):
        x = make_actor(rng)
        out = compose_st(x, params.paths["st"])
        assert out.enhanced.shape == (3, 4, 16)
        assert out.video.shape == (4, 16)

    def test_degenerate_single_token(self, params, rng):
        x = make_actor(rng, k=1, n=1)
        out = compose_st(x, params.paths["st"], trace=True)
        assert np.isfinite(out.enhanced.data).all()
        for tr in out.traces:
            assert np.array_equal(tr.weights, np.ones_like(tr.weights))

    def test_video_is_frame_mean(self, params, rng):
        x = make_actor(rng)
        out = compose_ts(x, params.paths["ts"])
        assert np.abs(out.video.data - out.enhanced.data.mean(axis=0)).max() <= 1e-12

    def test_st_and_ts_differ_with_shared_parameters(self, params, rng):
        x = make_actor(rng, k=1, n=3)
        a = compose_st(x, params.paths["st"])
        b = compose_ts(x, params.paths["st"])  # same weights, opposite order
        assert np.abs(a.enhanced.data - b.enhanced.data).max() > 1e-6

    def test_ss_keeps_actor_equivariance_with_zeroed_encoding(self, params, rng):
        x = make_actor(rng, k=2, n=5)
        perm = rng.permutation(5)
        out1 = compose_variant(x, params.paths["st"], "ss", zero_encoding=True)
        x2 = ActorTensor(features=Tensor(x.features.data[:, perm]), centers=x.centers[:, perm])
        out2 = compose_variant(x2, params.paths["st"], "ss", zero_encoding=True)
        assert np.abs(out1.enhanced.data[:, perm] - out2.enhanced.data).max() <= 1e-10

    def test_tt_single_frame_finite(self, params, rng):
        x = make_actor(rng, k=1, n=3)
        out = compose_variant(x, params.paths["ts"], "tt")
        assert np.isfinite(out.enhanced.data).all()

    def test_unknown_variant(self, params, rng):
        with pytest.raises(ValueError, match="variant"):
            compose_variant(make_actor(rng), params.paths["st"], "xy")

    def test_path_gradients(self, rng):
        cfg = ModelConfig(variant="st", scene_fusion="none", feature_dim=8, scene_dim=8,
                          model_dim=16, embed_dim=8, heads=2, ffn_dim=16, groups=4, actions=3)
        params = build_model_params(cfg, seed=1)
        x = make_actor(rng)
        w = rng.normal(size=(3, 4, 16))
        path_store = {n: t for n, t in params.store.items() if n.startswith("st.")}
        report = finite_difference_check(
            lambda: tsum(compose_st(x, params.paths["st"]).enhanced * w),
            path_store, tolerance=1e-4)
        assert report.passed, report.format_table()


class TestHeads:
    def test_zero_weights_zero_logits(self, params, rng):
        x = make_actor(rng)
        out = compose_st(x, params.paths["st"])
        pp = params.paths["st"]
        for t in (pp.head_group_w, pp.head_group_b, pp.head_individual_w, pp.head_individual_b):
            t.data[...] = 0.0
        group, indiv = classify_heads(out, pp)
        assert np.array_equal(group.data, np.zeros(4))
        assert np.array_equal(indiv.data, np.zeros((4, 3)))

    def test_duplicate_actor_leaves_group_logits_unchanged(self, params, rng):
        from dualpath.model import PathOutputs
        from dualpath.autodiff import pool

        video = rng.normal(size=(4, 16))
        dup = np.concatenate([video, video[2:3]], axis=0)
        pp = params.paths["st"]

        def group_of(v):
            po = PathOutputs(path="st", enhanced=Tensor(v[None]), video=Tensor(v))
            return classify_heads(po, pp)[0].data

        assert np.abs(group_of(video) - group_of(dup)).max() <= 1e-12

    def test_scene_head_is_mean_then_affine(self, params, rng):
        scene = rng.normal(size=(3, 8))
        logits = scene_head(scene, params)
        expected = scene.mean(axis=0) @ params.scene_head_w.data + params.scene_head_b.data
        assert np.abs(logits.data - expected).max() <= 1e-12

    def test_scene_head_constant_frames(self, params):
        scene = np.tile(np.arange(8.0), (3, 1))
        logits = scene_head(scene, params)
        expected = np.arange(8.0) @ params.scene_head_w.data + params.scene_head_b.data
        assert np.abs(logits.data - expected).max() <= 1e-12


class TestForwardModel:
    def _episode(self, rng, params):
        feats = embed_features(rng.normal(size=(3, 4, 8)), params)
        return ActorTensor(features=feats, centers=rng.uniform(size=(3, 4, 2)))

    def test_fused_is_exact_mean_of_sources(self, params, rng):
        x = self._episode(rng, params)
        scene = rng.normal(size=(3, 8))
        preds, _ = forward_model(x, scene, params)
        assert set(preds.group) == {"st", "ts", "scene"}
        manual = (preds.group["st"].data + preds.group["ts"].data + preds.group["scene"].data) / 3
        assert np.abs(preds.fused_group.data - manual).max() <= 1e-12
        manual_i = (preds.individual["st"].data + preds.individual["ts"].data) / 2
        assert np.abs(preds.fused_individual.data - manual_i).max() <= 1e-12

    def test_equal_sources_fuse_to_same_value(self, params, rng):
        x = self._episode(rng, params)
        preds, _ = forward_model(x, rng.normal(size=(3, 8)), params)
        v = preds.group["st"].data
        fused = (v + v + v) / 3
        assert np.abs(fused - v).max() <= 1e-12

    def test_single_path_variant_has_one_source(self, rng):
        cfg = ModelConfig(variant="st", scene_fusion="none", feature_dim=8, scene_dim=8,
                          model_dim=16, embed_dim=8, heads=2, ffn_dim=16, groups=4, actions=3)
        params = build_model_params(cfg, seed=2)
        x = self._episode(rng, params)
        preds, outputs = forward_model(x, rng.normal(size=(3, 8)), params)
        assert set(preds.group) == {"st"}
        assert set(outputs) == {"st"}
        assert np.array_equal(preds.fused_group.data, preds.group["st"].data)

    def test_early_and_middle_fusion_change_the_output(self, rng):
        outs = {}
        for mode in ("none", "early", "middle"):
            cfg = ModelConfig(variant="st", scene_fusion=mode, feature_dim=8, scene_dim=8,
                              model_dim=16, embed_dim=8, heads=2, ffn_dim=16, groups=4, actions=3)
            params = build_model_params(cfg, seed=3)
            r = np.random.default_rng(5)
            feats, centers = r.normal(size=(2, 3, 4, 8)), r.uniform(size=(2, 3, 4, 2))
            scene = r.normal(size=(2, 3, 8))
            preds, _ = forward_batch(feats, centers, scene, params)
            outs[mode] = preds.fused_group.data
        assert np.abs(outs["none"] - outs["early"]).max() > 1e-8
        assert np.abs(outs["none"] - outs["middle"]).max() > 1e-8
        assert np.abs(outs["early"] - outs["middle"]).max() > 1e-8

    def test_batched_forward_matches_per_episode(self, params, rng):
        feats = rng.normal(size=(3, 3, 4, 8))
        centers = rng.uniform(size=(3, 3, 4, 2))
        scene = rng.normal(size=(3, 3, 8))
        preds, _ = forward_batch(feats, centers, scene, params)
        for b in range(3):
            x = ActorTensor(features=embed_features(feats[b], params), centers=centers[b])
            single, _ = forward_model(x, scene[b], params)
            assert np.abs(preds.fused_group.data[b] - single.fused_group.data).max() <= 1e-12

    def test_wrong_width_rejected(self, params, rng):
        x = ActorTensor(features=Tensor(rng.normal(size=(3, 4, 12))),
                        centers=rng.uniform(size=(3, 4, 2)))
        with pytest.raises(ValueError, match="width"):
            forward_model(x, rng.normal(size=(3, 8)), params)


class TestPredict:
    def _preds(self, group, indiv):
        from dualpath.model import Predictions

        g = Tensor(np.asarray(group, dtype=float))
        i = Tensor(np.asarray(indiv, dtype=float))
        return Predictions(group={"st": g}, individual={"st": i},
                           fused_group=g, fused_individual=i)

    def test_argmax(self):
        g, ind = predict(self._preds([0.1, 0.9, 0.2], [[0.0, 1.0], [2.0, 0.0]]))
        assert g == 1
        assert np.array_equal(ind, [1, 0])

    def test_tie_breaks_to_lowest_index(self):
        g, _ = predict(self._preds([0.5, 0.5], [[0.0, 0.0]]))
        assert g == 0

    def test_shift_invariance(self):
        base = [0.3, -0.2, 0.9, 0.1]
        g1, _ = predict(self._preds(base, [[0.0]]))
        g2, _ = predict(self._preds([b + 7.5 for b in base], [[0.0]]))
        assert g1 == g2


class TestActorTensor:
    def test_center_bounds_checked(self, rng):
        with pytest.raises(ValueError, match="centers"):
            ActorTensor(features=Tensor(rng.normal(size=(2, 3, 16))),
                        centers=np.full((2, 3, 2), 1.5))

    def test_center_shape_checked(self, rng):
        with pytest.raises(ValueError, match="centers"):
            ActorTensor(features=Tensor(rng.normal(size=(2, 3, 16))),
                        centers=rng.uniform(size=(2, 4, 2)))
