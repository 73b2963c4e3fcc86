"""Gated temporal difference: annihilation, symmetry, mask behavior."""

import numpy as np
import pytest

from changedet.difference import (AbsDifference, DifferenceModule,
                                  GatedDifference, StagePreprocess)
from changedet.errors import ConfigError
from changedet.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def randomize(module, seed=99, scale=0.5):
    r = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        p.data[:] = r.normal(scale=scale, size=p.shape).astype(p.data.dtype)


class TestStagePreprocess:
    def test_output_channels_unified(self):
        for c_in in (8, 16, 32):
            pre = StagePreprocess(c_in, 16, rng=rng())
            out = pre(Tensor(np.ones((1, c_in, 4, 4), dtype=np.float32)))
            assert out.shape == (1, 16, 4, 4)

    def test_shared_weights_same_output(self):
        pre = StagePreprocess(8, 16, rng=rng(), dtype=np.float64)
        x = np.random.default_rng(1).normal(size=(1, 8, 4, 4))
        a = pre(Tensor(x)).data
        b = pre(Tensor(x.copy())).data
        np.testing.assert_array_equal(a, b)

    def test_param_count_32_to_16(self):
        # enumerated parts: depthwise 3*3*32+32 = 320, pointwise 32*32+32 = 1056,
        # BN 2*32 = 64, SE(ratio 4) (32*8+8) + (8*32+32) = 552,
        # final 1x1 32*16+16 = 528; the parts sum to 2520
        pre = StagePreprocess(32, 16, rng=rng())
        assert pre.local.depthwise.param_count() == 320
        assert pre.local.pointwise.param_count() == 1056
        assert pre.norm.param_count() == 64
        assert pre.gate.param_count() == 552
        assert pre.project.param_count() == 528
        assert pre.param_count() == 2520


class TestGatedDifference:
    def test_identical_inputs_annihilate_any_weights(self):
        gd = GatedDifference(16, rng=rng(), dtype=np.float64)
        randomize(gd)
        x = np.random.default_rng(2).normal(size=(2, 16, 5, 5))
        out = gd(Tensor(x), Tensor(x.copy())).data
        assert not out.any()

    def test_temporal_symmetry_exact(self):
        gd = GatedDifference(8, rng=rng(), dtype=np.float64)
        randomize(gd, seed=3)
        r = np.random.default_rng(4)
        a, b = r.normal(size=(1, 8, 6, 6)), r.normal(size=(1, 8, 6, 6))
        d_ab = gd(Tensor(a), Tensor(b)).data
        d_ba = gd(Tensor(b), Tensor(a)).data
        np.testing.assert_array_equal(d_ab, d_ba)

    def test_gate_half_when_projections_orthogonal(self):
        gd = GatedDifference(2, rng=rng(), dtype=np.float64)
        gd.shared_proj.weight.data[:] = np.eye(2).reshape(2, 2, 1, 1)
        gd.shared_proj.bias.data[:] = 0
        a = Tensor(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))
        b = Tensor(np.array([0.0, 1.0]).reshape(1, 2, 1, 1))
        agreement, gate = gd.agreement_gate(a, b)
        assert agreement.data.item() == 0.0
        assert gate.data.item() == 0.5

    def test_gate_tiny_at_scaled_dot_20(self):
        gd = GatedDifference(1, rng=rng(), dtype=np.float64)
        gd.shared_proj.weight.data[:] = 1.0
        gd.shared_proj.bias.data[:] = 0
        # d = 1 so scaled dot = q*k; choose inputs with q*k = 20
        a = Tensor(np.full((1, 1, 1, 1), 4.0))
        b = Tensor(np.full((1, 1, 1, 1), 5.0))
        _, gate = gd.agreement_gate(a, b)
        assert abs(gate.data.item() - 2.061153622438558e-09) < 1e-15

    def test_mask_monotone_in_agreement(self):
        # K = alpha Q sweep: gate strictly decreasing in alpha
        gd = GatedDifference(4, rng=rng(), dtype=np.float64)
        randomize(gd, seed=5)
        gd.shared_proj.bias.data[:] = 0
        q_in = np.random.default_rng(6).normal(size=(1, 4, 3, 3))
        gates = []
        for alpha in (-2.0, -1.0, 0.0, 1.0, 2.0):
            _, gate = gd.agreement_gate(Tensor(q_in), Tensor(alpha * q_in))
            gates.append(gate.data.mean())
        assert all(g0 > g1 for g0, g1 in zip(gates, gates[1:]))

    def test_gate_range_open_interval(self):
        gd = GatedDifference(8, rng=rng(), dtype=np.float64)
        randomize(gd, seed=7, scale=3.0)
        r = np.random.default_rng(8)
        _, gate = gd.agreement_gate(Tensor(r.normal(size=(2, 8, 4, 4)) * 10),
                                    Tensor(r.normal(size=(2, 8, 4, 4)) * 10))
        assert (gate.data > 0).all() and (gate.data < 1).all()

    def test_locality_of_agreement(self):
        gd = GatedDifference(4, rng=rng(), dtype=np.float64)
        randomize(gd, seed=9)
        r = np.random.default_rng(10)
        a = r.normal(size=(1, 4, 5, 5))
        b = r.normal(size=(1, 4, 5, 5))
        base, _ = gd.agreement_gate(Tensor(a), Tensor(b))
        a2 = a.copy()
        a2[0, :, 2, 3] += 1.0
        bumped, _ = gd.agreement_gate(Tensor(a2), Tensor(b))
        changed = base.data != bumped.data
        assert changed[0, 0, 2, 3]
        changed[0, 0, 2, 3] = False
        assert not changed.any()


class TestAbsDifference:
    def test_identical_inputs_zero(self):
        ad = AbsDifference(8, rng=rng(), dtype=np.float64)
        randomize(ad, seed=11)
        x = np.random.default_rng(12).normal(size=(1, 8, 4, 4))
        assert not ad(Tensor(x), Tensor(x.copy())).data.any()

    def test_scalar_channel_hand_case(self):
        ad = AbsDifference(1, rng=rng(), dtype=np.float64)
        ad.value_proj.weight.data[:] = 1.0
        a = Tensor(np.full((1, 1, 1, 1), 3.0))
        b = Tensor(np.full((1, 1, 1, 1), 5.0))
        assert ad(a, b).data.item() == 2.0

    def test_equals_gated_divided_by_mask(self):
        gd = GatedDifference(8, rng=rng(), dtype=np.float64)
        randomize(gd, seed=13)
        ad = AbsDifference(8, rng=rng(), dtype=np.float64)
        ad.value_proj.weight.data[:] = gd.value_proj.weight.data
        r = np.random.default_rng(14)
        a, b = r.normal(size=(1, 8, 4, 4)), r.normal(size=(1, 8, 4, 4))
        _, gate = gd.agreement_gate(Tensor(a), Tensor(b))
        gated = gd(Tensor(a), Tensor(b)).data
        plain = ad(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(gated / gate.data, plain, rtol=1e-12)


class TestDifferenceModule:
    def test_full_annihilation_through_preprocess(self):
        dm = DifferenceModule(32, 16, rng=rng(), dtype=np.float64)
        randomize(dm, seed=15)
        x = np.random.default_rng(16).normal(size=(1, 32, 8, 8))
        out = dm(Tensor(x), Tensor(x.copy())).data
        assert out.shape == (1, 16, 8, 8)
        assert not out.any()

    def test_manhattan_variant_selected_by_flag(self):
        dm = DifferenceModule(8, 16, gated=False, rng=rng())
        assert isinstance(dm.difference, AbsDifference)
        dm = DifferenceModule(8, 16, gated=True, rng=rng())
        assert isinstance(dm.difference, GatedDifference)

    def test_indivisible_stage_channels_rejected(self):
        with pytest.raises(ConfigError):
            DifferenceModule(6, 16, rng=rng())
