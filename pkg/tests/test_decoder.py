"""Fusion decoder: pyramid plumbing, head behaviour, residual identities."""

import numpy as np
import pytest

from changedet import tensor as T
from changedet.attention import WindowSpec
from changedet.decoder import (ChangeMap, DecoderConfig, FusionDecoder,
                               RefineBlock)
from changedet.errors import ConfigError, ShapeError
from changedet.tensor import Tensor

from test_attention import randomize, zero_branches

TOY_SPECS = (WindowSpec(2, 2), WindowSpec(4, 4), WindowSpec(8, 4))


def toy_config(threshold=0.5):
    return DecoderConfig(window_specs=TOY_SPECS, threshold=threshold)


def zero_pyramid(n, c, h):
    # shallowest-first, each level half the previous resolution
    return [Tensor(np.zeros((n, c, h // (2 ** i), h // (2 ** i)), dtype=np.float32))
            for i in range(3)]


def random_pyramid(rng, n, c, h, dtype=np.float32):
    return [Tensor(rng.normal(size=(n, c, h // (2 ** i), h // (2 ** i))).astype(dtype))
            for i in range(3)]


class TestDecoderConfig:
    def test_valid(self):
        toy_config().validate()

    def test_wrong_spec_count(self):
        with pytest.raises(ConfigError):
            DecoderConfig(window_specs=TOY_SPECS[:2]).validate()

    def test_invalid_inner_spec(self):
        with pytest.raises(ConfigError):
            DecoderConfig(window_specs=(WindowSpec(2, 2), WindowSpec(16, 7),
                                        WindowSpec(8, 4))).validate()

    def test_threshold_bounds(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ConfigError):
                toy_config(threshold=bad).validate()

    def test_non_spec_entry(self):
        with pytest.raises(ConfigError):
            DecoderConfig(window_specs=(4, 4, 8)).validate()


class TestRefineBlock:
    def test_param_count_c16(self):
        m = RefineBlock(16, rng=np.random.default_rng(0))
        # depthwise 3*3*16+16, pointwise 16*16+16, norm 2*16
        assert m.param_count() == 160 + 272 + 32 == 464

    def test_zero_branch_identity(self):
        rng = np.random.default_rng(1)
        m = RefineBlock(8, rng=rng)
        randomize(m, rng)
        m.local.pointwise.weight.data[:] = 0
        m.local.pointwise.bias.data[:] = 0
        m.norm.beta.data[:] = 0  # branch ends in gelu(bn(.)): bn(0) = beta
        x = Tensor(rng.normal(size=(2, 8, 6, 6)).astype(np.float32))
        np.testing.assert_array_equal(m(x).data, x.data)

    def test_shape_preserved(self):
        rng = np.random.default_rng(2)
        m = RefineBlock(4, rng=rng)
        x = Tensor(rng.normal(size=(3, 4, 10, 12)).astype(np.float32))
        assert m(x).shape == x.shape


class TestFusionDecoder:
    def test_zero_pyramid_gives_half_probability(self):
        m = FusionDecoder(16, toy_config(), rng=np.random.default_rng(3))
        out = m(zero_pyramid(1, 16, 16))
        assert out.probabilities.shape == (1, 1, 64, 64)
        np.testing.assert_array_equal(out.probabilities.data, 0.5)
        np.testing.assert_array_equal(out.binary, 0)

    def test_resolution_law_and_range(self):
        rng = np.random.default_rng(4)
        m = FusionDecoder(8, toy_config(), rng=rng)
        randomize(m, rng)
        out = m(random_pyramid(rng, 2, 8, 32))
        assert out.probabilities.shape == (2, 1, 128, 128)
        assert out.logits.shape == (2, 1, 128, 128)
        assert np.all(out.probabilities.data >= 0.0)
        assert np.all(out.probabilities.data <= 1.0)

    def test_determinism(self):
        rng = np.random.default_rng(5)
        m = FusionDecoder(8, toy_config(), rng=rng)
        randomize(m, rng)
        pyr = random_pyramid(rng, 1, 8, 16)
        a = m(pyr).probabilities.data
        b = m(pyr).probabilities.data
        np.testing.assert_array_equal(a, b)

    def test_wrong_level_count_rejected(self):
        m = FusionDecoder(8, toy_config(), rng=np.random.default_rng(6))
        with pytest.raises(ShapeError):
            m(zero_pyramid(1, 8, 16)[:2])

    def test_channel_mismatch_rejected(self):
        m = FusionDecoder(8, toy_config(), rng=np.random.default_rng(7))
        pyr = zero_pyramid(1, 8, 16)
        pyr[1] = Tensor(np.zeros((1, 4, 8, 8), dtype=np.float32))
        with pytest.raises(ShapeError):
            m(pyr)

    def test_non_halving_resolution_rejected(self):
        m = FusionDecoder(8, toy_config(), rng=np.random.default_rng(8))
        pyr = zero_pyramid(1, 8, 16)
        pyr[2] = Tensor(np.zeros((1, 8, 5, 5), dtype=np.float32))
        with pytest.raises(ShapeError):
            m(pyr)

    def test_monotone_thresholding(self):
        rng = np.random.default_rng(9)
        logits = Tensor(rng.normal(size=(1, 1, 8, 8)).astype(np.float32))
        probs = logits.sigmoid()
        low = ChangeMap(probs, logits, threshold=0.3).binary
        high = ChangeMap(probs, logits, threshold=0.7).binary
        assert not np.any(high & ~low)  # raising the cutoff never adds a 1

    def test_deepest_level_drives_output_when_branches_zeroed(self):
        rng = np.random.default_rng(10)
        m = FusionDecoder(8, toy_config(), rng=rng)
        randomize(m, rng)
        zero_branches(m)
        for refine in m.refines:
            refine.local.pointwise.weight.data[:] = 0
            refine.local.pointwise.bias.data[:] = 0
            refine.norm.beta.data[:] = 0
        pyr = zero_pyramid(1, 8, 16)
        deep = Tensor(rng.normal(size=(1, 8, 4, 4)).astype(np.float32))
        pyr[2] = deep
        out = m(pyr).logits
        # with every branch zeroed the pipeline is head(up2(up2(D3))) up4'd
        ref = T.bilinear_upsample(
            m.head(T.bilinear_upsample(T.bilinear_upsample(deep, 2), 2)), 4)
        np.testing.assert_array_equal(out.data, ref.data)
        pyr2 = [pyr[0], pyr[1], Tensor(deep.data + 1.0)]
        assert not np.array_equal(m(pyr2).logits.data, out.data)

    def test_four_level_variant_reuses_deepest_spec(self):
        rng = np.random.default_rng(11)
        m = FusionDecoder(8, toy_config(), levels=4, rng=rng)
        assert len(m.blocks) == 4
        assert m._specs[0] == m._specs[1] == WindowSpec(2, 2)
        pyr = [Tensor(np.zeros((1, 8, 16 // (2 ** i), 16 // (2 ** i)),
                               dtype=np.float32)) for i in range(4)]
        out = m(pyr)
        assert out.probabilities.shape == (1, 1, 64, 64)
        np.testing.assert_array_equal(out.probabilities.data, 0.5)

    def test_disabled_attention_variants_run(self):
        rng = np.random.default_rng(12)
        pyr = random_pyramid(rng, 1, 8, 16)
        no_global = FusionDecoder(8, toy_config(), use_global=False, rng=rng)
        assert no_global.post_fusion is None
        assert no_global(pyr).probabilities.shape == (1, 1, 64, 64)
        no_local = FusionDecoder(8, toy_config(), use_local=False, rng=rng)
        assert no_local(pyr).probabilities.shape == (1, 1, 64, 64)

    def test_bad_level_count_config(self):
        with pytest.raises(ConfigError):
            FusionDecoder(8, toy_config(), levels=5, rng=np.random.default_rng(13))
