import json

import numpy as np
import pytest

import raylaplace as rl
from raylaplace import evaluation, field_core
from raylaplace.errors import DomainError, ValidationError


class TestDepthError:
    def test_identical_planes(self):
        d = np.random.default_rng(0).random((8, 8))
        np.testing.assert_array_equal(rl.depth_error(d, d), 0.0)

    def test_constant_offset(self):
        d = np.random.default_rng(1).random((8, 8))
        np.testing.assert_allclose(rl.depth_error(d + 0.5, d), 0.5, rtol=1e-12)

    def test_mask_excludes_pixels(self):
        pred = np.ones((4, 4))
        ref = np.zeros((4, 4))
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, :] = True
        err = rl.depth_error(pred, ref, mask)
        assert err[0].sum() == 4.0 and err[1:].sum() == 0.0

    def test_random_mean_matches_direct(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert rl.depth_error(a, b).mean() == pytest.approx(float(np.mean(np.abs(a - b))), rel=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            rl.depth_error(np.zeros((2, 2)), np.zeros((3, 3)))


def brute_force_sparsification(errors, scores, step):
    """Independent enumeration of both removal processes."""
    errors = list(map(float, errors))
    n = len(errors)
    n_steps = int(np.floor(1.0 / step + 1e-9))
    fractions = [i * step for i in range(n_steps + 1)]

    def survivors_mean(key_values):
        out = []
        order = sorted(range(n), key=lambda i: (-key_values[i], i))
        for f in fractions:
            k = min(int(np.floor(f * n + 0.5)), n)
            kept = order[k:]
            out.append(sum(errors[i] for i in kept) / len(kept) if kept else 0.0)
        return out

    by_score = survivors_mean(list(map(float, scores)))
    by_error = survivors_mean(errors)
    base = by_score[0]
    gaps = [(s - e) / base for s, e in zip(by_score, by_error)]
    return fractions, by_score, by_error, sum(gaps) / len(gaps)


class TestSparsification:
    def test_perfect_scores_zero_area(self):
        rng = np.random.default_rng(3)
        errors = rng.random(500)
        out = rl.sparsification(errors, errors)
        assert out.ause == 0.0
        np.testing.assert_array_equal(out.by_score, out.by_error)

    def test_three_element_anticorrelated_brute_force(self):
        errors = np.array([3.0, 2.0, 1.0])
        scores = np.array([1.0, 2.0, 3.0])
        out = rl.sparsification(errors, scores, step=1.0 / 3.0)
        fr, bs, be, ause = brute_force_sparsification(errors, scores, 1.0 / 3.0)
        np.testing.assert_allclose(out.by_score, bs, rtol=1e-12)
        np.testing.assert_allclose(out.by_error, be, rtol=1e-12)
        assert out.ause == pytest.approx(ause, rel=1e-12)
        assert out.ause == pytest.approx(0.375, rel=1e-12)

    def test_random_brute_force_cross_check(self):
        rng = np.random.default_rng(8)
        errors = rng.random(23)
        scores = rng.random(23)
        out = rl.sparsification(errors, scores, step=0.1)
        fr, bs, be, ause = brute_force_sparsification(errors, scores, 0.1)
        np.testing.assert_allclose(out.by_score, bs, rtol=1e-12)
        np.testing.assert_allclose(out.by_error, be, rtol=1e-12)
        assert out.ause == pytest.approx(ause, rel=1e-12)

    def test_random_scores_have_positive_area(self):
        rng = np.random.default_rng(4)
        errors = rng.random(10_000)
        areas = [rl.sparsification(errors, np.random.default_rng(1000 + s).random(10_000)).ause
                 for s in range(20)]
        assert np.mean(areas) > 0.0
        assert min(areas) > 0.0

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(5)
        errors = rng.random(300)
        scores = rng.random(300)
        a = rl.sparsification(errors, scores)
        b = rl.sparsification(errors, np.exp(3.0 * scores) + 7.0)
        np.testing.assert_array_equal(a.by_score, b.by_score)
        assert a.ause == b.ause

    def test_oracle_curve_monotone_nonincreasing(self):
        rng = np.random.default_rng(6)
        errors = rng.random(157)
        out = rl.sparsification(errors, rng.random(157), step=0.05)
        assert np.all(np.diff(out.by_error) <= 1e-12)

    def test_ause_nonnegative(self):
        rng = np.random.default_rng(7)
        for s in range(10):
            errors = rng.random(97)
            out = rl.sparsification(errors, rng.random(97))
            assert out.ause >= 0.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValidationError):
            rl.sparsification(np.array([]), np.array([]))
        with pytest.raises(ValidationError):
            rl.sparsification(np.array([1.0]), np.array([1.0]))
        with pytest.raises(DomainError):
            rl.sparsification(np.ones(4), np.ones(4), step=0.7)


class TestPsnr:
    def test_identical_capped(self):
        img = np.random.default_rng(0).random((8, 8, 3))
        assert rl.psnr(img, img) == 99.0

    def test_mse_001_is_20db(self):
        ref = np.full((10, 10), 0.5)
        assert rl.psnr(ref + 0.1, ref) == pytest.approx(20.0, abs=1e-9)

    def test_mse_00025_pinned(self):
        ref = np.full((10, 10), 0.5)
        assert rl.psnr(ref + 0.05, ref) == pytest.approx(26.0206, abs=1e-4)

    def test_noise_decreases_psnr(self):
        rng = np.random.default_rng(1)
        ref = rng.random((16, 16, 3)) * 0.5 + 0.25
        clean = rl.psnr(ref, ref)
        noisy = [rl.psnr(np.clip(ref + np.random.default_rng(s).normal(0, 0.05, ref.shape), 0, 1), ref)
                 for s in range(20)]
        assert max(noisy) < clean

    def test_domain_and_shape_checks(self):
        with pytest.raises(ValidationError):
            rl.psnr(np.zeros((2, 2)), np.zeros((3, 3)))
        with pytest.raises(DomainError):
            rl.psnr(np.full((2, 2), 1.5), np.zeros((2, 2)))


class TestCoverage:
    def test_full_and_empty(self):
        img = rl.ChannelImage(rgb=np.zeros((4, 4, 3)), depth=np.zeros((4, 4)),
                              opacity=np.zeros((4, 4)), coverage=np.ones((4, 4), bool))
        assert rl.coverage(img) == 1.0
        img.coverage[:] = False
        assert rl.coverage(img) == 0.0

    def test_half_masked_plane(self):
        mask = np.ones((4, 4), bool)
        mask[:2] = False
        img = rl.ChannelImage(rgb=np.zeros((4, 4, 3)), depth=np.zeros((4, 4)),
                              opacity=np.zeros((4, 4)), coverage=mask)
        assert rl.coverage(img) == 0.5

    def test_missing_mask(self):
        img = rl.ChannelImage(rgb=np.zeros((4, 4, 3)), depth=np.zeros((4, 4)),
                              opacity=np.zeros((4, 4)), coverage=None)
        with pytest.raises(ValidationError):
            rl.coverage(img)


class TestEnsemble:
    def _tiny_setup(self):
        gt = rl.make_synthetic_scene(rl.SceneSpec(kind="sphere", radius=0.3), 8)
        cams = rl.orbit_cameras(gt.bounds, 2, 1.7, [0.0], fx=10.0, width=8, height=8)
        opts = rl.RenderOptions(samples_per_ray=8)
        images = np.stack([rl.render_channels(gt, c, opts).rgb for c in cams])
        init = rl.VoxelField(gt.bounds, np.full((8, 8, 8), -2.0, np.float32),
                             np.zeros((8, 8, 8, 3), np.float32))
        cfg = rl.TrainConfig(iterations=3, batch_rays=32, samples_per_ray=8, seed=0)
        return images, cams, init, cfg, opts

    def test_identical_seeds_zero_std(self):
        images, cams, init, cfg, opts = self._tiny_setup()
        res = rl.ensemble_uncertainty(images, cams, init, cfg, cams[0], k=2, seeds=(7, 7),
                                      render_options=opts)
        np.testing.assert_array_equal(res.depth_std, 0.0)

    def test_two_member_population_std(self, monkeypatch):
        images, cams, init, cfg, opts = self._tiny_setup()
        a = rl.make_synthetic_scene(rl.SceneSpec(kind="sphere", radius=0.25), 8)
        b = rl.make_synthetic_scene(rl.SceneSpec(kind="sphere", radius=0.35), 8)
        fields = iter([a, b])
        monkeypatch.setattr(field_core, "fit_field", lambda *args, **kw: next(fields))
        res = rl.ensemble_uncertainty(images, cams, init, cfg, cams[0], k=2, render_options=opts)
        da = rl.render_channels(a, cams[0], opts).depth
        db = rl.render_channels(b, cams[0], opts).depth
        np.testing.assert_allclose(res.depth_std, np.abs(da - db) / 2.0, atol=1e-12)

    def test_rejects_small_k(self):
        images, cams, init, cfg, opts = self._tiny_setup()
        with pytest.raises(ValidationError):
            rl.ensemble_uncertainty(images, cams, init, cfg, cams[0], k=1)


class TestRankCorrelation:
    def test_identity_and_reverse(self):
        a = np.array([3.0, 1.0, 4.0, 1.5, 9.0])
        assert rl.rank_correlation(a, a) == pytest.approx(1.0)
        assert rl.rank_correlation(a, -a) == pytest.approx(-1.0)

    def test_pinned_example(self):
        # ranks differ by (0,1,1,1,1); rho = 1 - 6*4/(5*24) = 0.8
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        b = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
        assert rl.rank_correlation(a, b) == pytest.approx(0.8, rel=1e-12)

    def test_brute_force_rank_definition(self):
        rng = np.random.default_rng(11)
        a, b = rng.random(40), rng.random(40)

        def ranks(v):
            order = np.argsort(v)
            r = np.empty(len(v))
            r[order] = np.arange(1, len(v) + 1)
            return r

        ra, rb = ranks(a), ranks(b)  # distinct values: no ties to average
        d = ra - rb
        rho = 1 - 6 * np.sum(d * d) / (len(a) * (len(a) ** 2 - 1))
        assert rl.rank_correlation(a, b) == pytest.approx(rho, rel=1e-12)

    def test_average_tie_handling(self):
        a = np.array([1.0, 1.0, 2.0, 3.0])
        b = np.array([1.0, 2.0, 3.0, 4.0])
        # ranks of a with average ties: (1.5, 1.5, 3, 4)
        ra = np.array([1.5, 1.5, 3.0, 4.0])
        rb = np.array([1.0, 2.0, 3.0, 4.0])
        expected = np.corrcoef(ra, rb)[0, 1]
        assert rl.rank_correlation(a, b) == pytest.approx(float(expected), rel=1e-12)

    def test_constant_input_degenerate(self):
        assert rl.rank_correlation(np.ones(5), np.arange(5.0)) is None

    def test_rejects_short_input(self):
        with pytest.raises(ValidationError):
            rl.rank_correlation(np.ones(2), np.ones(2))


class TestReport:
    def test_json_and_text_round_trip(self, tmp_path):
        metrics = {"ause": 0.25, "psnr": 31.5, "coverage": 0.9, "spearman": 0.7,
                   "curve_fractions": np.array([0.0, 0.5, 1.0])}
        jp, tp = tmp_path / "report.json", tmp_path / "report.txt"
        evaluation.write_report(metrics, jp, tp)
        loaded = json.loads(jp.read_text())
        assert loaded["ause"] == 0.25
        assert loaded["curve_fractions"] == [0.0, 0.5, 1.0]
        text = tp.read_text()
        assert "psnr=31.5" in text
