import math

import numpy as np
import pytest

import geopoi.autodiff as ad
from geopoi.autodiff import Tape
from geopoi.geocode import QuadKey, ngrams
from geopoi.geoenc import (
    GeoEncoderConfig,
    GeoEncoderParams,
    attend_gram_batch,
    attend_grams,
    coordinate_features,
    encode_batch,
    encode_gps,
    fourier_encode,
)
from oracles import grad_close

TINY = GeoEncoderConfig(level=6, ngram_n=3, gram_dim=4, key_dim=3, fourier_dim=4,
                        out_dim=5)


def tiny_params(seed=0, config=TINY):
    return GeoEncoderParams(config, np.random.default_rng(seed))


class TestConfig:
    def test_fourier_dim_must_be_even(self):
        with pytest.raises(ValueError):
            GeoEncoderConfig(fourier_dim=7)

    def test_position_count(self):
        assert GeoEncoderConfig(level=25, ngram_n=3).n_positions == 23
        assert GeoEncoderConfig(level=2, ngram_n=3).n_positions == 1

    def test_frequency_init_scale(self):
        cfg = GeoEncoderConfig(level=25, fourier_dim=2048, fourier_scale=2.0)
        params = GeoEncoderParams(cfg, np.random.default_rng(0))
        assert float(params.w_s.values.std()) == pytest.approx(0.5, rel=0.05)


class TestFourier:
    def test_zero_digits(self):
        params = tiny_params()
        m = TINY.fourier_dim
        out = fourier_encode(np.zeros(TINY.level), params.w_s).values
        assert np.allclose(out[: m // 2], 1.0 / math.sqrt(m))
        assert np.allclose(out[m // 2 :], 0.0)

    def test_norm_law(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            level = int(rng.integers(3, 26))
            m = 2 * int(rng.integers(1, 32))
            s = rng.integers(0, 4, size=level).astype(float)
            w_s = ad.constant(rng.normal(0, 2.0, size=(m // 2, level)))
            norm_sq = float((fourier_encode(s, w_s).values ** 2).sum())
            assert abs(norm_sq - 0.5) <= 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        w_s = ad.parameter(rng.normal(size=(3, 6)))
        s = rng.integers(0, 4, size=6).astype(float)
        weights = rng.normal(size=6)

        def loss_value():
            return float(ad.sum_(ad.mul(fourier_encode(s, w_s), ad.constant(weights))).values)

        with Tape() as tape:
            loss = ad.sum_(ad.mul(fourier_encode(s, w_s), ad.constant(weights)))
            tape.backward(loss)
        analytic = w_s.grad.copy()
        step = 1e-5
        for idx in [(0, 0), (1, 3), (2, 5)]:
            orig = w_s.values[idx]
            w_s.values[idx] = orig + step
            up = loss_value()
            w_s.values[idx] = orig - step
            down = loss_value()
            w_s.values[idx] = orig
            assert grad_close(float(analytic[idx]), (up - down) / (2 * step))

    def test_dimension_mismatch(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            fourier_encode(np.zeros(TINY.level + 1), params.w_s)


class TestAttention:
    def test_identical_grams_zero_positions_give_v_projection(self):
        params = tiny_params(3)
        params.pos_table.values[:] = 0.0
        idx = np.full((1, TINY.n_positions), 5)
        out = attend_gram_batch(idx, params).values[0]
        expected = params.gram_table.values[5] @ params.wv.values
        assert np.allclose(out, expected, atol=1e-12)

    def test_single_gram_is_v_projection_of_enhanced_embedding(self):
        cfg = GeoEncoderConfig(level=3, ngram_n=3, gram_dim=4, key_dim=3, fourier_dim=4, out_dim=5)
        params = tiny_params(5, cfg)
        seq = ngrams(QuadKey("031"), 3)
        out = attend_grams(seq, params).values
        enhanced = params.gram_table.values[13] + params.pos_table.values[0]
        assert np.allclose(out, enhanced @ params.wv.values, atol=1e-12)

    def test_joint_permutation_leaves_pooled_output_unchanged(self):
        rng = np.random.default_rng(9)
        params = tiny_params(7)
        idx = rng.integers(0, TINY.n_grams_vocab, size=(1, TINY.n_positions))
        base = attend_gram_batch(idx, params).values

        perm = rng.permutation(TINY.n_positions)
        params_perm = tiny_params(7)
        params_perm.pos_table.values = params.pos_table.values[perm]
        out = attend_gram_batch(idx[:, perm], params_perm).values
        assert np.allclose(out, base, atol=1e-12)

    def test_gram_count_enforced(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            attend_gram_batch(np.zeros((1, 2), dtype=int), params)


class TestEncode:
    def test_output_shape(self):
        params = tiny_params()
        assert encode_gps(40.7, -74.0, params).shape == (TINY.out_dim,)
        assert encode_batch([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], params).shape == (3, TINY.out_dim)

    def test_deterministic(self):
        params = tiny_params()
        a = encode_gps(51.5, -0.12, params).values
        b = encode_gps(51.5, -0.12, params).values
        assert np.array_equal(a, b)

    def test_batch_row_equals_single(self):
        params = tiny_params()
        batch = encode_batch([10.0, 20.0], [30.0, 40.0], params).values
        single = encode_gps(20.0, 40.0, params).values
        assert np.allclose(batch[1], single, atol=1e-12)

    def test_identity_fourier_block_reproduces_fourier_encode(self):
        cfg = GeoEncoderConfig(level=6, ngram_n=3, gram_dim=4, key_dim=3, fourier_dim=4, out_dim=4)
        params = tiny_params(13, cfg)
        # Kill the attention branch and route the Fourier block through an
        # identity fusion map.
        fusion = np.zeros((cfg.gram_dim + cfg.fourier_dim, cfg.out_dim))
        fusion[cfg.gram_dim :, :] = np.eye(cfg.fourier_dim)
        params.fusion_w.values = fusion
        params.fusion_b.values[:] = 0.0
        out = encode_gps(48.85, 2.35, params).values
        digits, _ = coordinate_features([48.85], [2.35], cfg)
        expected = fourier_encode(digits[0], params.w_s).values
        assert np.allclose(out, expected, atol=1e-12)

    def test_zero_fourier_flag_blanks_fourier_contribution(self):
        cfg = GeoEncoderConfig(level=6, ngram_n=3, gram_dim=4, key_dim=3, fourier_dim=4, out_dim=4)
        params = tiny_params(13, cfg)
        fusion = np.zeros((cfg.gram_dim + cfg.fourier_dim, cfg.out_dim))
        fusion[cfg.gram_dim :, :] = np.eye(cfg.fourier_dim)
        params.fusion_w.values = fusion
        out = encode_gps(48.85, 2.35, params, zero_fourier=True).values
        assert np.allclose(out, params.fusion_b.values, atol=1e-12)

    def test_end_to_end_gradients(self):
        rng = np.random.default_rng(17)
        params = tiny_params(19)
        weights = rng.normal(size=TINY.out_dim)
        lats, lons = [40.7, -33.9], [-74.0, 18.4]

        def build_loss():
            return ad.sum_(ad.mul(ad.mean(encode_batch(lats, lons, params), axis=0),
                                  ad.constant(weights)))

        ad.zero_grads(params.parameters())
        with Tape() as tape:
            tape.backward(build_loss())
        step = 1e-5
        for p in params.parameters():
            analytic = p.grad if p.grad is not None else np.zeros(p.shape)
            flat_picks = rng.choice(p.values.size, size=min(4, p.values.size), replace=False)
            for flat in flat_picks:
                idx = np.unravel_index(flat, p.shape) if p.shape else ()
                orig = p.values[idx]
                p.values[idx] = orig + step
                up = float(build_loss().values)
                p.values[idx] = orig - step
                down = float(build_loss().values)
                p.values[idx] = orig
                numeric = (up - down) / (2 * step)
                assert grad_close(float(analytic[idx]), numeric), (
                    f"{idx}: analytic {analytic[idx]}, numeric {numeric}"
                )

    def test_locality_nearby_pairs_more_similar_than_distant(self):
        cfg = GeoEncoderConfig()  # full-size default encoder
        params = GeoEncoderParams(cfg, np.random.default_rng(101))
        rng = np.random.default_rng(202)
        anchors_lat = rng.uniform(-60.0, 60.0, size=200)
        anchors_lon = rng.uniform(-179.0, 179.0, size=200)
        near = encode_batch(anchors_lat + 0.0005, anchors_lon, params).values  # ~55 m
        far = encode_batch(anchors_lat + 1.5, anchors_lon, params).values     # ~165 km
        base = encode_batch(anchors_lat, anchors_lon, params).values

        def mean_cosine(a, b):
            num = (a * b).sum(axis=1)
            den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            return float((num / den).mean())

        assert mean_cosine(base, near) > mean_cosine(base, far)
