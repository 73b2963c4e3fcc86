"""Module registry plumbing and the composite layers."""

import numpy as np
import pytest

from changedet.errors import ConfigError
from changedet.layers import (BatchNorm2d, ChannelMLP, Conv2d, DepthwiseConv2d,
                              Module, ModuleList, SeparableConv2d,
                              SqueezeExcite, he_normal)
from changedet.tensor import Tensor


def rng():
    return np.random.default_rng(0)


class TestModuleRegistry:
    def test_named_parameters_dotted_and_ordered(self):
        class Inner(Module):
            def __init__(self):
                super().__init__()
                self.w = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)

        class Outer(Module):
            def __init__(self):
                super().__init__()
                self.a = Inner()
                self.b = Inner()
                self.w = Tensor(np.ones(1, dtype=np.float32), requires_grad=True)

        names = [n for n, _ in Outer().named_parameters()]
        assert names == ["a.w", "b.w", "w"]

    def test_module_list_names(self):
        class Leaf(Module):
            def __init__(self):
                super().__init__()
                self.w = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)

        class Holder(Module):
            def __init__(self):
                super().__init__()
                self.items = ModuleList([Leaf(), Leaf()])

        names = [n for n, _ in Holder().named_parameters()]
        assert names == ["items.0.w", "items.1.w"]

    def test_reassigning_none_drops_registration(self):
        class M(Module):
            def __init__(self):
                super().__init__()
                self.child = Conv2d(2, 2, 1, rng=rng())

        m = M()
        assert m.param_count() > 0
        m.child = None
        assert m.param_count() == 0

    def test_train_eval_propagate(self):
        class M(Module):
            def __init__(self):
                super().__init__()
                self.bn = BatchNorm2d(3)

        m = M()
        assert m.training and m.bn.training
        m.eval()
        assert not m.training and not m.bn.training
        m.train()
        assert m.bn.training

    def test_zero_grad(self):
        c = Conv2d(2, 2, 1, rng=rng())
        c.weight.grad = np.ones_like(c.weight.data)
        c.zero_grad()
        assert c.weight.grad is None


class TestHeInit:
    def test_std_tracks_fan_in(self):
        w = he_normal(np.random.default_rng(1), (256, 64, 3, 3), fan_in=64 * 9)
        expect = np.sqrt(2.0 / (64 * 9))
        assert abs(w.data.std() - expect) / expect < 0.05

    def test_dtype(self):
        w = he_normal(np.random.default_rng(2), (4, 4), fan_in=4, dtype=np.float64)
        assert w.data.dtype == np.float64


class TestConvLayers:
    def test_conv_output_shape(self):
        c = Conv2d(3, 8, 3, stride=2, padding=1, rng=rng())
        out = c(Tensor(np.ones((2, 3, 8, 8), dtype=np.float32)))
        assert out.shape == (2, 8, 4, 4)

    def test_separable_param_count_c8(self):
        # depthwise 3*3*8+8 = 80, pointwise 8*8+8 = 72
        sep = SeparableConv2d(8, 8, 3, rng=rng())
        assert sep.param_count() == 152

    def test_depthwise_fan_in(self):
        d = DepthwiseConv2d(16, 3, padding=1, rng=rng())
        assert d.weight.shape == (16, 1, 3, 3)


class TestSqueezeExcite:
    def test_zero_expand_weights_halve_input(self):
        se = SqueezeExcite(8, rng=rng())
        se.expand.weight.data[:] = 0
        se.expand.bias.data[:] = 0
        x = np.random.default_rng(3).normal(size=(2, 8, 4, 4)).astype(np.float32)
        out = se(Tensor(x)).data
        np.testing.assert_allclose(out, 0.5 * x, rtol=1e-6)

    def test_constant_input_hand_gate(self):
        se = SqueezeExcite(4, rng=np.random.default_rng(4), dtype=np.float64)
        x = np.full((1, 4, 3, 3), 2.0)
        pooled = np.full(4, 2.0)
        inner = se.reduce.weight.data[:, :, 0, 0] @ pooled + se.reduce.bias.data
        inner = np.maximum(inner, 0)
        logits = se.expand.weight.data[:, :, 0, 0] @ inner + se.expand.bias.data
        gate = 1 / (1 + np.exp(-logits))
        out = se(Tensor(x)).data
        for c in range(4):
            np.testing.assert_allclose(out[0, c], 2.0 * gate[c], atol=1e-12)

    def test_shape_preserved(self):
        se = SqueezeExcite(8, rng=rng())
        for shape in ((1, 8, 2, 2), (3, 8, 5, 7)):
            x = Tensor(np.ones(shape, dtype=np.float32))
            assert se(x).shape == shape

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ConfigError):
            SqueezeExcite(6, rng=rng())


class TestChannelMLP:
    def test_param_count(self):
        # 8->8: 8*8+8 twice
        mlp = ChannelMLP(8, 8, rng=rng())
        assert mlp.param_count() == 144

    def test_shape(self):
        mlp = ChannelMLP(4, 8, rng=rng())
        x = Tensor(np.ones((2, 4, 3, 3), dtype=np.float32))
        assert mlp(x).shape == (2, 4, 3, 3)
