import numpy as np
import pytest

import gradcheck
from srdistill import curation, imgmath, srtrain
from srdistill.srtrain import SRConfig, SRNet


def _textured(rng, n=6, size=32):
    yy, xx = np.mgrid[0:size, 0:size]
    imgs = []
    for _ in range(n):
        period = rng.uniform(3, 8)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * rng.uniform(-1, 1) + yy) / period)
        imgs.append(np.repeat(wave[..., None], 3, axis=2))
    return imgs


class TestPairs:
    def test_flat(self):
        pair = srtrain.make_pairs([np.full((32, 32, 3), 0.3)])[0]
        assert pair.lr.shape == (8, 8, 3)
        np.testing.assert_allclose(pair.lr, 0.3, atol=1e-12)

    def test_matches_resample_bit_exact(self, rng):
        hr = rng.random((32, 24, 3))
        pair = srtrain.make_pairs([hr])[0]
        assert pair.lr.tobytes() == imgmath.resample(hr, srtrain.down_spec()).tobytes()

    def test_indivisible(self):
        with pytest.raises(ValueError):
            srtrain.make_pairs([np.zeros((30, 32, 3))])


class TestNet:
    def test_output_dims(self, rng):
        net = SRNet()
        out = net.predict(net.init_params(rng), rng.random((5, 7, 3)))
        assert out.shape == (20, 28, 3)

    def test_untrained_residual_is_bicubic(self, rng):
        net = SRNet()
        lr = rng.random((8, 8, 3))
        np.testing.assert_allclose(net.predict(net.init_params(rng), lr),
                                   imgmath.resample(lr, srtrain.up_spec()), atol=1e-12)

    @pytest.mark.parametrize("case", range(3))
    def test_gradient(self, case):
        rng = np.random.default_rng(40 + case)
        net, theta, lr, hr = gradcheck.random_sr_case(rng)
        assert gradcheck.sr_error(net, theta, lr, hr, rng, n_coords=32) <= 1e-4

    def test_dihedral_group(self, rng):
        x = rng.random((2, 4, 4, 1))
        images = {dihedral.tobytes() for dihedral in (srtrain.dihedral(x, k) for k in range(8))}
        assert len(images) == 8


class TestTraining:
    def test_zero_epochs_returns_init(self, rng):
        pairs = srtrain.make_pairs([rng.random((16, 16, 3))])
        params = srtrain.train_sr(pairs, 0, seed=5)
        np.testing.assert_array_equal(params.theta, SRNet().init_params(np.random.default_rng(5)))

    def test_deterministic(self, rng):
        pairs = srtrain.make_pairs(_textured(rng, 3, 16))
        a = srtrain.train_sr(pairs, 3, seed=1)
        b = srtrain.train_sr(pairs, 3, seed=1)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_single_pair_beats_bicubic(self, rng):
        pairs = srtrain.make_pairs(_textured(rng, 1, 32))
        params = srtrain.train_sr(pairs, 200, seed=0)
        assert srtrain.evaluate(params, pairs)[0] > srtrain.bicubic_baseline(pairs)[0]

    def test_fixed_batch_loss_decreases(self, rng):
        pairs = srtrain.make_pairs(_textured(rng, 2, 16))
        hist = srtrain.train_sr(pairs, 20, seed=0, config=SRConfig(augment=False)).history
        assert len(hist) == 20 and hist[-1] < hist[0]

    def test_empty_pairs(self):
        with pytest.raises(ValueError):
            srtrain.train_sr([], 1, 0)

    def test_divergence_raises(self, rng):
        # make_pairs rejects non-finite images, so build the pair by hand
        pairs = [srtrain.DistilledPair(np.full((16, 16, 3), np.nan), np.full((4, 4, 3), np.nan))]
        with pytest.raises(FloatingPointError, match="epoch 1"):
            srtrain.train_sr(pairs, 2, 0)


class TestEvaluate:
    def test_bicubic_targets_reproduce_bicubic(self, rng):
        test_pairs = srtrain.make_pairs(_textured(rng, 3, 32))
        lrs = [p.lr for p in srtrain.make_pairs(_textured(rng, 4, 32))]
        targets = [srtrain.DistilledPair(imgmath.resample(lr, srtrain.up_spec()), lr) for lr in lrs]
        params = srtrain.train_sr(targets, 5, seed=0)
        got = srtrain.evaluate(params, test_pairs)[0]
        assert got == pytest.approx(srtrain.bicubic_baseline(test_pairs)[0], abs=0.01)

    def test_overfit_flatish(self):
        img = np.full((16, 16, 3), 0.5)
        img[4:12, 4:12] = 0.55
        pairs = srtrain.make_pairs([img])
        params = srtrain.train_sr(pairs, 300, seed=0, config=SRConfig(augment=False))
        assert srtrain.evaluate(params, pairs)[0] > 40.0

    def test_pure(self, rng):
        pairs = srtrain.make_pairs(_textured(rng, 2, 16))
        params = srtrain.train_sr(pairs, 1, seed=0)
        assert srtrain.evaluate(params, pairs) == srtrain.evaluate(params, pairs)

    def test_empty(self, rng):
        params = srtrain.train_sr(srtrain.make_pairs([rng.random((16, 16, 3))]), 0, 0)
        with pytest.raises(ValueError):
            srtrain.evaluate(params, [])


class TestBaselines:
    def test_random_crop_contract(self, rng):
        imgs = [rng.random((40, 48, 3)) for _ in range(3)]
        a = srtrain.baseline_random_crop(imgs, 5, 16, seed=3)
        b = srtrain.baseline_random_crop(imgs, 5, 16, seed=3)
        assert len(a) == 5 and all(x.shape == (16, 16, 3) for x in a)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_random_crop_bounds(self, rng):
        imgs = [np.zeros((40, 48, 3)), np.zeros((33, 20, 3))]
        crop_rng = np.random.default_rng(0)
        for _ in range(1000):
            crop, (x, y) = srtrain._random_crop(imgs, 20, crop_rng)
            assert crop.shape == (20, 20, 3)
            assert x >= 0 and y >= 0

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            srtrain.baseline_random_crop([np.zeros((8, 8, 3))], 1, 16, 0)

    def test_threshold_flat_exhausts_budget(self):
        with pytest.raises(srtrain.BudgetExhausted, match="acceptance rate 0.0000") as info:
            srtrain.baseline_threshold_crop([np.full((32, 32, 3), 0.5)], 2, 16, 0, 23.0)
        assert info.value.attempts == 200 and info.value.rate == 0.0

    def test_threshold_all_pass(self, rng):
        crops = srtrain.baseline_threshold_crop(_textured(rng), 6, 16, 0, 30.0)
        assert len(crops) == 6
        assert all(curation.score_patch(c) < 30.0 for c in crops)

    def test_acceptance_rate_matches_grid(self, rng):
        imgs = []
        for _ in range(4):
            img = np.full((24, 24, 3), 0.4)
            img[:, 12:] = _textured(rng, 1, 24)[0][:, 12:]
            imgs.append(img)
        size, thr = 12, 25.0
        exhaustive = [curation.score_patch(img[y:y + size, x:x + size]) < thr
                      for img in imgs for y in range(24 - size + 1) for x in range(24 - size + 1)]
        expected = np.mean(exhaustive)
        got = srtrain.acceptance_rate(imgs, size, 0, thr, draws=2000)
        # binomial standard error at 2000 draws is about 0.011
        assert abs(got - expected) < 0.04
