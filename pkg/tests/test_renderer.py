import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import raylaplace as rl
from raylaplace import renderer
from raylaplace.errors import DomainError, ValidationError


def identity_camera(width=100, height=100, fx=100.0, fy=100.0):
    return rl.Camera(np.eye(3), np.zeros(3), fx, fy, width / 2.0, height / 2.0, width, height)


class TestGenerateRay:
    def test_principal_point_gives_optical_axis(self):
        cam = identity_camera()
        # pixel center exactly at the principal point
        cam.cx, cam.cy = 37.5, 12.5
        ray = rl.generate_ray(cam, (37, 12))
        np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-12)

    def test_directions_are_unit(self):
        cam = identity_camera(width=17, height=13, fx=20.0, fy=25.0)
        for px in range(0, 17, 4):
            for py in range(0, 13, 3):
                ray = rl.generate_ray(cam, (px, py))
                assert np.linalg.norm(ray.direction) == pytest.approx(1.0, abs=1e-12)

    def test_pinned_pinhole_example(self):
        # independent projective oracle: d = ((px+.5-cx)/fx, (py+.5-cy)/fy, 1), normalized
        cam = identity_camera(width=100, height=100, fx=100.0, fy=100.0)
        cam.cx = cam.cy = 50.0
        ray = rl.generate_ray(cam, (99, 49))
        oracle = np.array([(99 + 0.5 - 50) / 100, (49 + 0.5 - 50) / 100, 1.0])
        oracle /= np.linalg.norm(oracle)
        np.testing.assert_allclose(ray.direction, oracle, atol=1e-12)
        assert ray.direction[0] == pytest.approx(0.44362, abs=1e-4)
        assert ray.direction[2] == pytest.approx(0.89620, abs=1e-4)

    def test_pixel_out_of_range(self):
        cam = identity_camera()
        with pytest.raises(DomainError):
            rl.generate_ray(cam, (100, 0))
        with pytest.raises(DomainError):
            rl.generate_ray(cam, (0, -1))

    def test_batched_directions_match_single(self):
        cam = rl.look_at_camera([2.0, -1.0, 0.7], [0.5, 0.5, 0.5], 30.0, 35.0, 8, 6)
        dirs = renderer.camera_ray_directions(cam)
        for px, py in [(0, 0), (7, 5), (3, 2)]:
            np.testing.assert_allclose(dirs[py, px], rl.generate_ray(cam, (px, py)).direction,
                                       atol=1e-12)


class TestCameraValidation:
    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(rl.PoseError):
            rl.Camera(r, np.zeros(3), 10, 10, 5, 5, 10, 10)

    def test_rejects_non_orthonormal(self):
        r = np.eye(3)
        r[0, 1] = 0.2
        with pytest.raises(rl.PoseError):
            rl.Camera(r, np.zeros(3), 10, 10, 5, 5, 10, 10)

    def test_pose12_round_trip(self):
        cam = rl.look_at_camera([1.5, 0.3, 1.1], [0.5, 0.5, 0.5], 40.0, 42.0, 32, 24)
        again = rl.Camera.from_pose12(cam.pose12, cam.fx, cam.fy, cam.cx, cam.cy,
                                      cam.width, cam.height)
        np.testing.assert_allclose(again.rotation, cam.rotation, atol=1e-15)
        np.testing.assert_allclose(again.translation, cam.translation, atol=1e-15)


class TestSampleStratified:
    def test_single_midpoint(self):
        # near is clamped positive by the ray contract; 1e-6 stands in for 0
        ray = rl.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1e-6, 2.0)
        s = rl.sample_stratified(ray, 1, mode="midpoint")
        assert s.positions[0] == pytest.approx(1.0, abs=1e-5)
        assert s.spacings[0] == pytest.approx(1.0, abs=1e-5)

    def test_four_midpoints(self):
        ray = rl.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1e-6, 1.0)
        s = rl.sample_stratified(ray, 4, mode="midpoint")
        np.testing.assert_allclose(s.positions, [0.125, 0.375, 0.625, 0.875], atol=1e-5)

    @given(st.integers(0, 999))
    @settings(max_examples=1000, deadline=None)
    def test_jitter_in_bin_and_reproducible(self, seed):
        ray = rl.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.5, 2.5)
        n = 8
        a = rl.sample_stratified(ray, n, mode="jitter", rng=np.random.default_rng(seed))
        b = rl.sample_stratified(ray, n, mode="jitter", rng=np.random.default_rng(seed))
        np.testing.assert_array_equal(a.positions, b.positions)
        edges = np.linspace(0.5, 2.5, n + 1)
        assert np.all(a.positions >= edges[:-1]) and np.all(a.positions <= edges[1:])
        assert np.all(np.diff(a.positions) > 0)


class TestComposite:
    def test_zero_density_renders_background(self):
        res = rl.composite(np.zeros(5), np.ones((5, 3)) * 0.3, np.full(5, 0.2),
                           background=(0.1, 0.2, 0.9))
        np.testing.assert_allclose(res.rgb, [0.1, 0.2, 0.9], atol=1e-15)
        np.testing.assert_allclose(res.weights, 0.0, atol=0)
        assert res.opacity == 0.0

    def test_single_sample_half_weight(self):
        tau = np.array([np.log(2.0) / 0.4])
        res = rl.composite(tau, np.array([[1.0, 0.4, 0.0]]), np.array([0.4]),
                           background=(0.0, 0.0, 1.0))
        assert res.weights[0] == pytest.approx(0.5, rel=1e-12)
        np.testing.assert_allclose(res.rgb, [0.5, 0.2, 0.5], rtol=1e-12)

    def test_two_sample_closed_form(self):
        # hand-evaluated: w0 = 1-e^-0.5, w1 = e^-0.5 (1-e^-1)
        res = rl.composite(np.array([1.0, 2.0]),
                           np.array([[1.0, 0, 0], [0, 1.0, 0]]),
                           np.array([0.5, 0.5]))
        np.testing.assert_allclose(res.rgb, [0.393469, 0.383401, 0.0], atol=1e-6)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 24))
    @settings(max_examples=80, deadline=None)
    def test_weights_nonnegative_sum_below_one(self, seed, n):
        rng = np.random.default_rng(seed)
        res = rl.composite(rng.uniform(0, 30, n), rng.random((n, 3)), rng.uniform(0.01, 0.5, n))
        assert np.all(res.weights >= 0)
        assert res.opacity <= 1.0 + 1e-9

    def test_padding_invariance(self):
        rng = np.random.default_rng(8)
        tau = rng.uniform(0, 3, 6)
        col = rng.random((6, 3))
        delta = rng.uniform(0.05, 0.3, 6)
        t = np.cumsum(delta) - delta / 2
        base = rl.composite(tau, col, delta, positions=t)
        k = 3
        tau2 = np.insert(tau, k, 0.0)
        col2 = np.insert(col, k, [0.9, 0.1, 0.5], axis=0)
        delta2 = np.insert(delta, k, 0.123)
        t2 = np.insert(t, k, 0.5 * (t[k - 1] + t[k]))
        padded = rl.composite(tau2, col2, delta2, positions=t2)
        np.testing.assert_allclose(padded.rgb, base.rgb, rtol=1e-12)
        assert padded.opacity == pytest.approx(base.opacity, rel=1e-12)
        assert padded.depth == pytest.approx(base.depth, rel=1e-12)

    def test_rejects_negative_density_and_mismatch(self):
        with pytest.raises(DomainError):
            rl.composite(np.array([-0.1]), np.zeros((1, 3)), np.array([0.1]))
        with pytest.raises(ValidationError):
            rl.composite(np.zeros(2), np.zeros((3, 3)), np.zeros(2) + 0.1)

    def test_density_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        tau = rng.uniform(0.1, 4.0, 7)
        col = rng.random((7, 3))
        delta = rng.uniform(0.05, 0.4, 7)
        bg = np.array([0.2, 0.0, 0.7])
        comp = rl.composite(tau, col, delta, background=bg)
        deriv = renderer.color_density_derivative(comp.weights, comp.trans_after, col, delta, bg)
        h = 1e-6
        for i in range(7):
            tp, tm = tau.copy(), tau.copy()
            tp[i] += h
            tm[i] -= h
            fd = (rl.composite(tp, col, delta, background=bg).rgb
                  - rl.composite(tm, col, delta, background=bg).rgb) / (2 * h)
            np.testing.assert_allclose(deriv[i], fd, rtol=1e-5, atol=1e-10)


class TestRenderChannels:
    def test_depth_of_axis_aligned_wall(self, unit_bounds):
        spec = rl.SceneSpec(kind="box", center=(0.5, 0.5, 0.75), half_extent=(0.6, 0.6, 0.1),
                            raw_density=60.0, shading=0.0)
        wall = rl.make_synthetic_scene(spec, 48)
        cam = rl.look_at_camera([0.5, 0.5, -1.0], [0.5, 0.5, 0.5], 60.0, 60.0, 9, 9)
        n = 96
        img = rl.render_channels(wall, cam, rl.RenderOptions(samples_per_ray=n))
        # central pixel: wall front face at z=0.65 is 1.65 from the camera
        bin_width = np.sqrt(3.0) / n
        assert img.depth[4, 4] == pytest.approx(1.65, abs=2 * bin_width)
        assert img.opacity[4, 4] > 0.99

    def test_quadrature_consistency(self, sphere_field, ring_cameras):
        cam = ring_cameras[0]
        a = rl.render_channels(sphere_field, cam, rl.RenderOptions(samples_per_ray=64)).rgb
        b = rl.render_channels(sphere_field, cam, rl.RenderOptions(samples_per_ray=128)).rgb
        assert np.max(np.abs(a - b)) < 1e-2

    def test_midpoint_renders_bit_identical(self, sphere_field, ring_cameras):
        cam = ring_cameras[1]
        a = rl.render_channels(sphere_field, cam, rl.RenderOptions(samples_per_ray=32))
        b = rl.render_channels(sphere_field, cam, rl.RenderOptions(samples_per_ray=32))
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_threshold_requires_uncertainty(self, sphere_field, ring_cameras):
        with pytest.raises(ValidationError):
            rl.render_channels(sphere_field, ring_cameras[0],
                               rl.RenderOptions(samples_per_ray=8, threshold=0.5))

    def test_threshold_extremes(self, sphere_field, ring_cameras):
        m = 8
        hess = rl.HessianDiagonal(np.zeros((m, m, m, 3)), 0, 1e-4 / m ** 3, sphere_field.bounds)
        hess.accum[2:5, 2:5, 2:5] = 3.0  # synthetic observed pocket
        hess.ray_count = 10
        uf = rl.compute_uncertainty_field(hess)
        cam = ring_cameras[0]
        base = rl.render_channels(sphere_field, cam, rl.RenderOptions(samples_per_ray=24))
        keep_all = rl.render_channels(sphere_field, cam,
                                      rl.RenderOptions(samples_per_ray=24, threshold=np.inf),
                                      uncertainty=uf)
        np.testing.assert_array_equal(keep_all.rgb, base.rgb)
        np.testing.assert_array_equal(keep_all.depth, base.depth)
        assert keep_all.coverage.all()
        drop_all = rl.render_channels(sphere_field, cam,
                                      rl.RenderOptions(samples_per_ray=24, threshold=-np.inf,
                                                       background=(0.3, 0.1, 0.6)),
                                      uncertainty=uf)
        np.testing.assert_allclose(drop_all.opacity, 0.0, atol=0)
        np.testing.assert_allclose(drop_all.rgb - np.array([0.3, 0.1, 0.6]), 0.0, atol=1e-15)

    def test_threshold_sweep_monotone_opacity(self):
        field = rl.make_synthetic_scene(rl.SceneSpec(kind="floater"), 32)
        m = 16
        rng = np.random.default_rng(0)
        hess = rl.HessianDiagonal(rng.uniform(0, 4, (m, m, m, 3)), 50, 1e-4 / m ** 3, field.bounds)
        uf = rl.compute_uncertainty_field(hess)
        cam = rl.look_at_camera([0.5, -1.2, 0.9], [0.5, 0.5, 0.5], 40.0, 40.0, 24, 24)
        mean_opacity = []
        for kappa in np.linspace(0.0, 1.0, 10):
            img = rl.render_channels(field, cam, rl.RenderOptions(samples_per_ray=32,
                                                                  threshold=float(kappa)),
                                     uncertainty=uf)
            mean_opacity.append(float(img.opacity.mean()))
        diffs = np.diff(mean_opacity)
        assert np.all(diffs >= -1e-12)  # higher threshold keeps more


class TestOrbitCameras:
    def test_cameras_look_at_center(self, unit_bounds):
        cams = rl.orbit_cameras(unit_bounds, 6, 2.0, [20.0], fx=50.0, width=32, height=32)
        assert len(cams) == 6
        for cam in cams:
            center_dir = unit_bounds.center - cam.translation
            center_dir /= np.linalg.norm(center_dir)
            optical = cam.rotation @ np.array([0.0, 0.0, 1.0])
            assert np.dot(center_dir, optical) == pytest.approx(1.0, abs=1e-9)

    def test_azimuth_span_restricts_positions(self, unit_bounds):
        cams = rl.orbit_cameras(unit_bounds, 8, 2.0, [0.0], fx=50.0, width=16, height=16,
                                azimuth_start_deg=-90.0, azimuth_span_deg=180.0)
        for cam in cams:
            assert cam.translation[0] >= unit_bounds.center[0] - 1e-9
