import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvtrack.errors import ConfigError, InputError
from cvtrack.mfw import detect_peaks
from cvtrack.synth import (ObjectSpec, SceneConfig, blob_sigma, generate_scene, gt_at,
                           n_frames, render_frame, subsample)


def one_object(center, velocity, box=(8.0, 8.0), **kw):
    return SceneConfig(objects=[ObjectSpec(center, velocity, box)], noise=0.0, **kw)


class TestGenerate:
    def test_static_object(self):
        tracks = generate_scene(one_object((100.0, 80.0), (0.0, 0.0), n_frames=5))
        assert np.all(tracks[0].centers == [100.0, 80.0])

    def test_same_seed_same_tracks(self):
        a, b = generate_scene(SceneConfig(seed=11)), generate_scene(SceneConfig(seed=11))
        for x, y in zip(a, b):
            assert np.array_equal(x.centers, y.centers) and np.array_equal(x.appearance, y.appearance)

    def test_kinematics_with_reflection(self):
        # extent 252, box 8: the corridor ends at 248
        tracks = generate_scene(one_object((236.0, 100.0), (4.0, 0.0), n_frames=10))
        assert tracks[0].centers[:, 0].tolist() == [236, 240, 244, 248, 244, 240, 236, 232, 228, 224]
        assert np.all(tracks[0].centers[:, 1] == 100)

    def test_infeasible(self):
        with pytest.raises(ConfigError):
            generate_scene(SceneConfig(height=8, width=8, box_range=(40.0, 48.0)))
        with pytest.raises(ConfigError):
            generate_scene(SceneConfig(noise=-1.0))
        with pytest.raises(ConfigError):
            generate_scene(SceneConfig(occlusions=[(9, 1, 2)]))

    def test_occlusion_schedule(self):
        tracks = generate_scene(SceneConfig(occlusions=[(2, 3, 4)], n_frames=8))
        assert tracks[1].visible.tolist() == [True] * 3 + [False] * 2 + [True] * 3
        assert 2 not in [g[0] for g in gt_at(tracks, 3)]
        assert 2 in [g[0] for g in gt_at(tracks, 3, visible_only=False)]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_objects_stay_inside(self, seed):
        cfg = SceneConfig(seed=seed, velocity_range=(10.0, 40.0), n_frames=30)
        for tr in generate_scene(cfg):
            half = np.array(tr.box) / 2
            assert np.all(tr.centers >= half - 1e-9)
            assert np.all(tr.centers <= np.array(cfg.extent) - half + 1e-9)

    def test_lattice_snaps(self):
        for tr in generate_scene(SceneConfig(lattice=8, seed=4)):
            assert np.all(tr.centers % 8 == 0)


class TestSubsample:
    def test_identity(self):
        tracks = generate_scene(SceneConfig(n_frames=7))
        sub = subsample(tracks, 1)
        assert np.array_equal(sub[0].centers, tracks[0].centers)

    def test_stride_three(self):
        tracks = generate_scene(one_object((40.0, 40.0), (4.0, 0.0), n_frames=10))
        sub = subsample(tracks, 3)
        assert np.all(np.diff(sub[0].centers[:, 0]) == 12)
        assert len(sub[0].frames) == math.ceil(10 / 3) and sub[0].frames.tolist() == [0, 1, 2, 3]

    def test_config_stride(self):
        tracks = generate_scene(SceneConfig(n_frames=10, frame_stride=3))
        assert n_frames(tracks) == 4

    def test_bad_stride(self):
        with pytest.raises(InputError):
            subsample([], 0)


class TestRender:
    def test_no_visible_objects(self):
        cfg = SceneConfig(n_objects=1, occlusions=[(1, 0, 19)], noise=0.0)
        f, p, dets = render_frame(generate_scene(cfg), 0, cfg)
        assert not p.data.any() and dets == []

    def test_single_object_peak(self):
        cfg = one_object((100.0, 60.0), (0.0, 0.0), n_frames=2)
        _, p, _ = render_frame(generate_scene(cfg), 0, cfg)
        assert np.unravel_index(np.argmax(p.data[:, :, 0]), (64, 64)) == (15, 25)

    def test_dominant_appearance_per_cell(self):
        cfg = SceneConfig(objects=[ObjectSpec((40.0, 40.0), (0, 0), (16.0, 16.0)),
                                   ObjectSpec((200.0, 200.0), (0, 0), (16.0, 16.0))], noise=0.01)
        tracks = generate_scene(cfg)
        f, _, _ = render_frame(tracks, 0, cfg)
        rows, cols = np.meshgrid(np.arange(64) * 4.0, np.arange(64) * 4.0, indexing="ij")
        checked = 0
        for tr in tracks:
            x, y = tr.centers[0]
            sig = blob_sigma(tr.box, 4) * 4
            support = np.exp(-((cols - x) ** 2 + (rows - y) ** 2) / (2 * sig * sig)) > 0.1
            for r, c in zip(*np.nonzero(support)):
                scores = [float(f.data[r, c, 1:] @ t.appearance) for t in tracks]
                assert tracks[int(np.argmax(scores))].id == tr.id
                checked += 1
        assert checked > 10

    def test_render_deterministic(self):
        cfg = SceneConfig(seed=5)
        tracks = generate_scene(cfg)
        a, b = render_frame(tracks, 3, cfg)[0], render_frame(tracks, 3, cfg)[0]
        assert np.array_equal(a.data, b.data)

    def test_heatmap_clipped(self):
        cfg = SceneConfig(objects=[ObjectSpec((100.0, 100.0), (0, 0), (40.0, 40.0))] * 2, noise=0.0)
        _, p, _ = render_frame(generate_scene(cfg), 0, cfg)
        assert p.data.max() == 1.0 and p.data.min() >= 0.0

    def test_occlusion_residual_keeps_faint_appearance(self):
        cfg = one_object((100.0, 100.0), (0.0, 0.0), box=(32.0, 32.0), occlusions=[(1, 0, 0)],
                         occlusion_residual=0.5)
        tracks = generate_scene(cfg)
        f, p, dets = render_frame(tracks, 0, cfg)
        shown, _, _ = render_frame(tracks, 1, cfg)
        assert not p.data.any() and dets == []
        np.testing.assert_allclose(f.data[:, :, 1:], 0.5 * shown.data[:, :, 1:])

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_peaks_recover_visible_centers(self, seed):
        cfg = SceneConfig(seed=seed, n_objects=2, box_range=(16.0, 24.0), noise=0.0,
                          objects=None, n_frames=1)
        tracks = generate_scene(cfg)
        a, b = tracks[0].centers[0], tracks[1].centers[0]
        if np.hypot(*(a - b)) < 80:
            return  # blobs overlap
        _, p, dets = render_frame(tracks, 0, cfg)
        found = sorted(d.cell for d in detect_peaks(p, 0.3))
        want = sorted((round(d.center[1] / 4), round(d.center[0] / 4)) for d in dets)
        assert found == want


def test_appearance_separability():
    close = total = 0
    for seed in range(100):
        apps = [t.appearance for t in generate_scene(SceneConfig(seed=seed, n_objects=4))]
        for i in range(4):
            assert np.linalg.norm(apps[i]) == pytest.approx(1.0)
            for j in range(i + 1, 4):
                total += 1
                close += float(apps[i] @ apps[j]) >= 0.5
    assert close / total <= 0.01
