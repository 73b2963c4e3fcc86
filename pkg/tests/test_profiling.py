"""Analytic parameter and FLOP accounting: conventions, regressions,
ablation directions."""

import numpy as np
import pytest

from changedet.errors import ConfigError
from changedet.layers import Module, SeparableConv2d
from changedet.model import ChangeModel, ModelConfig
from changedet.profiling import (ATTENTION, CONV, ELEMENTWISE,
                                 attention_matmul_flops, conv_flops,
                                 count_params, estimate_flops)

# frozen regression constants for the toy default config
TOY_TOTAL_PARAMS = 88380
TOY_PARAMS_BY_MODULE = {"encoder": 28304, "differences": 13084, "decoder": 46992}
TOY_FLOPS_64 = 13342272
TOY_FLOPS_64_BY_CATEGORY = {CONV: 7867904, ATTENTION: 4835840,
                            ELEMENTWISE: 638528}
# squeeze-excite bottleneck convs see a pooled 1x1 map, so their cost does
# not grow with input size: one SE at c=64 in the encoder plus one per
# stage and date (c = 16/32/64, twice each) in the difference preprocess
SE_CONV_CONST = sum(conv_flops(c, c // 4, 1, 1, 1) + conv_flops(c // 4, c, 1, 1, 1)
                    for c in (64, 16, 16, 32, 32, 64, 64))


class TestFlopFormulas:
    def test_pointwise_conv_example(self):
        assert conv_flops(4, 4, 1, 2, 2) == 128

    def test_attention_two_matmul_example(self):
        one = attention_matmul_flops(4, 4, 4)
        assert 2 * one == 256

    def test_depthwise_grouping(self):
        assert conv_flops(8, 8, 3, 4, 4, groups=8) == conv_flops(8, 8, 3, 4, 4) // 8

    def test_doubling_output_map_quadruples_exactly(self):
        for c_in, c_out, k, h, w in ((3, 8, 3, 5, 7), (16, 16, 1, 4, 4),
                                     (8, 8, 3, 2, 2)):
            assert conv_flops(c_in, c_out, k, 2 * h, 2 * w) == \
                4 * conv_flops(c_in, c_out, k, h, w)


class TestCountParams:
    def test_separable_conv_example(self):
        m = SeparableConv2d(8, 8, 3, rng=np.random.default_rng(0))
        assert m.param_count() == 80 + 72 == 152

    def test_toy_config_frozen_total(self):
        report = count_params(ModelConfig())
        assert report.total == TOY_TOTAL_PARAMS
        assert report.by_module == TOY_PARAMS_BY_MODULE
        assert sum(report.by_module.values()) == report.total

    def test_report_matches_live_model(self):
        cfg = ModelConfig()
        report = count_params(cfg)
        model = ChangeModel(cfg, seed=7)
        assert report.total == model.param_count()
        live = [(n, p.shape) for n, p in model.named_parameters()]
        assert report.parameters == live
        names = [n for n, _ in live]
        assert len(names) == len(set(names))

    def test_parameterless_module_counts_zero(self):
        assert Module().param_count() == 0


class TestAblationDirections:
    def test_full_projections_strictly_increases(self):
        base = count_params(ModelConfig()).total
        assert count_params(ModelConfig().with_flags(full_projections=True)).total > base

    def test_four_stages_strictly_increases(self):
        base = count_params(ModelConfig()).total
        assert count_params(ModelConfig().with_flags(use_four_stages=True)).total > base

    def test_removing_components_strictly_decreases(self):
        base = count_params(ModelConfig()).total
        for flag in ("use_edm", "use_swsa", "use_egsa"):
            smaller = count_params(ModelConfig().with_flags(**{flag: False})).total
            assert smaller < base, flag


class TestEstimateFlops:
    def test_toy_frozen_regression_at_64(self):
        report = estimate_flops(ModelConfig(), 64)
        assert report.total == TOY_FLOPS_64
        assert report.by_category == TOY_FLOPS_64_BY_CATEGORY
        assert sum(report.by_category.values()) == report.total
        assert sum(report.by_module.values()) == report.total

    def test_doubling_input_quadruples_spatial_convs(self):
        conv64 = estimate_flops(ModelConfig(), 64).by_category[CONV]
        conv128 = estimate_flops(ModelConfig(), 128).by_category[CONV]
        assert conv128 == 4 * (conv64 - SE_CONV_CONST) + SE_CONV_CONST

    def test_monotone_in_input_area(self):
        totals = [estimate_flops(ModelConfig(), s).total for s in (64, 128, 192)]
        assert totals[0] < totals[1] < totals[2]

    def test_rectangular_input(self):
        report = estimate_flops(ModelConfig(), (64, 128))
        assert estimate_flops(ModelConfig(), 64).total < report.total \
            < estimate_flops(ModelConfig(), 128).total

    def test_invalid_input_size_rejected(self):
        with pytest.raises(ConfigError):
            estimate_flops(ModelConfig(), 50)

    def test_ablations_reduce_flops(self):
        base = estimate_flops(ModelConfig(), 64).total
        for flag in ("use_edm", "use_swsa", "use_egsa"):
            cfg = ModelConfig().with_flags(**{flag: False})
            assert estimate_flops(cfg, 64).total < base, flag
