import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spkocc.scenes import (
    OCCLUDER_PATTERNS,
    SceneConfigError,
    SceneRenderer,
    SceneSpec,
    displacements,
    generate_sample,
    random_scene,
    render_occluded_scene,
    sample_shifted,
)
from spkocc.simulate import simulate_pixel, simulate_stream
from spkocc.spikes import accumulate_window, firing_rate_image, split_windows


def spike_steps(train):
    return (np.flatnonzero(train) + 1).tolist()  # 1-based step numbers


class TestPixel:
    def test_half_current(self):
        out = simulate_pixel([0.5] * 12, 1.0)
        assert spike_steps(out) == [2, 4, 6, 8, 10, 12]
        assert out.mean() == 0.5

    def test_point_three(self):
        # 0.3, 0.6, 0.9, 1.2 -> fire at step 4, reset
        out = simulate_pixel([0.3] * 16, 1.0)
        assert spike_steps(out) == [4, 8, 12, 16]
        assert out.mean() == 0.25

    def test_zero_current(self):
        assert not simulate_pixel(np.zeros(50)).any()

    def test_residual_discarded(self):
        # 0.7 + 0.7 = 1.4 fires; the 0.4 excess is not carried
        assert spike_steps(simulate_pixel([0.7] * 6, 1.0)) == [2, 4, 6]

    def test_rejects_negative_current(self):
        with pytest.raises(ValueError):
            simulate_pixel([0.1, -0.1])

    @pytest.mark.parametrize("theta", [0.0, -1.0])
    def test_rejects_bad_threshold(self, theta):
        with pytest.raises(ValueError):
            simulate_pixel([0.1], theta)

    @given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 5))
    def test_rate_law(self, p, q, n):
        current = Fraction(p, q)
        if current > 1:
            return
        period = math.ceil(1 / current)
        out = simulate_pixel([float(current)] * (n * period), 1.0)
        assert int(out.sum()) == n

    @given(st.lists(st.integers(0, 64), min_size=1, max_size=200), st.data())
    @settings(max_examples=80)
    def test_charge_bound_any_window(self, units, data):
        # dyadic currents keep float accumulation exact
        currents = np.array(units, dtype=np.float64) / 64
        out = simulate_pixel(currents, 1.0)
        t0 = data.draw(st.integers(0, len(units) - 1))
        t1 = data.draw(st.integers(t0 + 1, len(units)))
        charge = currents[t0:t1].sum()
        assert out[t0:t1].sum() <= math.floor(charge + 1.0)
        if t0 == 0:
            assert out[:t1].sum() <= math.floor(charge)


class TestStream:
    def test_uniform_half(self):
        video = [np.full((3, 4), 0.5)] * 40
        s = simulate_stream(video, threshold=1.0, gain=1.0)
        assert s.data.shape == (40, 3, 4)
        assert np.all(firing_rate_image(s, 0, 40) == 0.5)

    def test_two_regions_ordering(self):
        frame = np.full((2, 4), 0.2)
        frame[:, 2:] = 0.8
        s = simulate_stream([frame] * 120, threshold=1.0, gain=1.0)
        rate = firing_rate_image(s, 0, 120)
        # rate law 1/ceil(1/(g*I)): 1/5 and 1/2
        assert np.allclose(rate[:, :2], 1 / 5) and np.allclose(rate[:, 2:], 1 / 2)
        assert rate[:, :2].max() < rate[:, 2:].min()

    def test_zero_video(self):
        assert not simulate_stream([np.zeros((3, 3))] * 10).data.any()

    def test_empty_video(self):
        with pytest.raises(ValueError):
            simulate_stream([])

    def test_frame_size_mismatch(self):
        with pytest.raises(ValueError):
            simulate_stream([np.zeros((2, 2)), np.zeros((2, 3))])

    def test_matches_per_pixel_simulation(self):
        rng = np.random.default_rng(0)
        video = rng.random((50, 3, 5))
        s = simulate_stream(video, threshold=1.0, gain=0.4)
        for y in range(3):
            for x in range(5):
                assert np.array_equal(s.data[:, y, x], simulate_pixel(0.4 * video[:, y, x], 1.0))

    def test_pixel_order_independence(self):
        rng = np.random.default_rng(1)
        video = rng.random((60, 4, 6))
        perm = rng.permutation(24)
        flat = video.reshape(60, 24)
        s = simulate_stream(flat.reshape(60, 4, 6), gain=0.3).data.reshape(60, 24)
        s_perm = simulate_stream(flat[:, perm].reshape(60, 4, 6), gain=0.3).data.reshape(60, 24)
        assert np.array_equal(s[:, perm], s_perm)

    def test_noise_flag_changes_output_deterministically(self):
        video = [np.full((4, 4), 0.5)] * 50
        clean = simulate_stream(video, gain=0.3)
        a = simulate_stream(video, gain=0.3, noise_std=0.05, rng=np.random.default_rng(3))
        b = simulate_stream(video, gain=0.3, noise_std=0.05, rng=np.random.default_rng(3))
        assert a == b and a != clean


class TestScene:
    def test_parallax_arithmetic(self):
        scene = SceneSpec(camera_velocity=1.0, depth_occ=1.0, depth_bg=10.0, duration=20)
        bg_dx, (occ_dy, occ_dx) = displacements(scene, 10)
        assert bg_dx == pytest.approx(1.0)
        assert occ_dx == pytest.approx(10.0)
        assert occ_dy == 0.0

    @given(st.floats(0.001, 2.0), st.floats(0.1, 5.0), st.floats(1.01, 20.0), st.integers(1, 1000))
    def test_parallax_monotone(self, v, d_occ, ratio, t):
        scene = SceneSpec(camera_velocity=v, depth_occ=d_occ, depth_bg=d_occ * ratio, duration=t + 1)
        bg_dx, (_, occ_dx) = displacements(scene, t)
        assert abs(occ_dx) > abs(bg_dx)

    def test_opaque_mask_gives_occluder_intensity(self):
        scene = SceneSpec(height=6, width=6, duration=5, occluder_intensity=0.3, seed=1)
        r = SceneRenderer(scene)
        r.mask[:] = 1.0
        assert np.allclose(r.render(2), 0.3)

    def test_no_mask_gives_shifted_background(self):
        scene = SceneSpec(height=6, width=6, duration=5, seed=1)
        r = SceneRenderer(scene)
        r.mask[:] = 0.0
        assert np.allclose(r.render(3), r.background_view(3))

    def test_integer_shift_is_exact_slice(self):
        canvas = np.arange(100.0).reshape(10, 10)
        view = sample_shifted(canvas, (2, 2), (1.0, -2.0), (4, 5))
        assert np.array_equal(view, canvas[3:7, 0:5])

    def test_shift_beyond_canvas(self):
        scene = SceneSpec(height=8, width=8, duration=100, camera_velocity=1.0, depth_bg=2.0,
                          background_margin=3)
        r = SceneRenderer(scene)
        r.render(0)
        with pytest.raises(ValueError, match="outside"):
            r.render(99)

    def test_render_time_bounds(self):
        with pytest.raises(ValueError):
            render_occluded_scene(SceneSpec(duration=5, height=4, width=4), 5)

    def test_invalid_depths(self):
        with pytest.raises(SceneConfigError) as err:
            SceneSpec(depth_occ=5.0, depth_bg=5.0)
        assert err.value.field == "depth_bg"

    def test_unknown_pattern(self):
        with pytest.raises(SceneConfigError) as err:
            SceneSpec(pattern="chainlink")
        assert err.value.field == "pattern"

    def test_roundtrip_dict(self):
        scene = random_scene(4, "fabric_net")
        assert SceneSpec.from_dict(scene.to_dict()) == scene

    @pytest.mark.parametrize("pattern", OCCLUDER_PATTERNS)
    def test_masks_are_partial(self, pattern):
        r = SceneRenderer(random_scene(0, pattern))
        assert 0.1 < r.mask.mean() < 0.9
        assert r.mask.min() >= 0 and r.mask.max() <= 1


class TestSample:
    def test_degenerate_static_opaque(self):
        scene = SceneSpec(height=8, width=8, duration=40, camera_velocity=0.0, occluder_intensity=0.5,
                          gain=1.0, seed=2)
        r = SceneRenderer(scene)
        r.mask[:] = 1.0
        from spkocc.simulate import simulate_stream as sim
        stream = sim(r.frames(), gain=1.0)
        assert np.all(accumulate_window(stream) == 0.5)

    def test_see_through_in_center_window(self):
        # the mesh sweeps about two periods along both axes during the center window,
        # so every pixel it covers at the center time is uncovered for part of the window
        scene = SceneSpec(height=32, width=32, duration=700, pattern="square_mesh", occluder_period=10.0,
                          occluder_thickness=2.0, occluder_intensity=0.0, depth_bg=15.0,
                          camera_velocity=28.0 / 699, occluder_velocity=(28.0 / 699, 0.0), seed=5)
        sample = generate_sample(scene)
        r = SceneRenderer(scene)
        tc = r.center_time()
        acc = accumulate_window(split_windows(sample.stream, 100).s_center)
        bg = r.background_view(tc)
        occluded = r.mask_view(tc) > 0.99
        assert occluded.mean() > 0.2
        bg_rate = 1.0 / np.ceil(scene.threshold / (scene.gain * bg[occluded]))
        vals = acc[occluded]
        # strictly between the occluder rate (0) and a slightly shifted background rate
        assert np.all(vals > 0.0)
        assert np.mean(vals < bg_rate) > 0.95

    def test_ground_truth_is_center_background(self):
        scene = random_scene(6, "fence", 24, 24, 101)
        sample = generate_sample(scene)
        r = SceneRenderer(scene)
        assert np.allclose(sample.ground_truth, r.background_view(50.0), atol=1 / 65535)
        assert sample.ground_truth.shape == (24, 24)

    def test_deterministic(self):
        scene = random_scene(7, "hexagonal_mesh", 16, 16, 200)
        assert generate_sample(scene) == generate_sample(scene)
