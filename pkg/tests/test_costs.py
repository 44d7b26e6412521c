import numpy as np
import pytest

from queryts.costs import (conventional_patch_cost, conventional_variable_cost,
                           estimate_cost, query_patch_cost, query_variable_cost)
from queryts.errors import ValidationError
from queryts.model import HierForecaster, ModelConfig


class TestDominantTerms:
    def test_conventional_variable_example(self):
        # B=1, N=2, L_v=3, D=4 -> 1*2*3*4 = 24
        assert conventional_variable_cost(1, 2, 3, 4) == 24

    def test_query_variable_example(self):
        # same extents: 1*2*((3+1)^2*4 + (3+1)*4^2) = 2*(64+64) = 256
        assert query_variable_cost(1, 2, 3, 4) == 256

    def test_patch_variants(self):
        assert conventional_patch_cost(2, 3, 4, 5, 6) == 2 * 3 * 4 * 5 * 6
        s = 5 + 1
        assert query_patch_cost(2, 3, 4, 5, 6) == 2 * 3 * 4 * (s * s * 6 + s * 36)

    def test_linear_in_sequence_length(self):
        base = conventional_variable_cost(1, 2, 10, 4)
        assert conventional_variable_cost(1, 2, 20, 4) == 2 * base

    def test_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            conventional_variable_cost(0, 2, 3, 4)
        with pytest.raises(ValidationError):
            query_patch_cost(1, 2, 3, -1, 4)


class TestCostReport:
    def test_parameter_count_equals_manifest_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            heads = int(rng.choice([1, 2, 4]))
            mc = ModelConfig(num_variables=int(rng.integers(1, 4)),
                             dim=int(heads * rng.integers(2, 5)),
                             heads=heads,
                             layers=int(rng.integers(1, 3)),
                             patch_size=6.0, stride=6.0, seed=0)
            model = HierForecaster(mc)
            manifest_sum = sum(int(np.prod(s)) for _, s in model.params.manifest())
            report = estimate_cost(mc, 1, 3, l_pred=2,
                                   param_count=model.params.count())
            assert report.parameter_count == manifest_sum

    def test_stage_split_present(self):
        mc = ModelConfig(num_variables=2, dim=8, heads=2, seed=0)
        report = estimate_cost(mc, 2, 4, l_pred=3, param_count=10)
        rows = dict(report.rows())
        for key in ("tokenization_macs", "aggregation_macs", "encoder_macs",
                    "decoder_macs", "total_macs"):
            assert rows[key] > 0
        assert rows["total_macs"] == (rows["tokenization_macs"] + rows["aggregation_macs"]
                                      + rows["encoder_macs"] + rows["decoder_macs"])

    def test_aggregation_uses_query_formula(self):
        mc = ModelConfig(num_variables=2, dim=4, heads=1, layers=1,
                         patch_size=12.0, stride=12.0, seed=0)
        report = estimate_cost(mc, 1, 3, l_pred=2, param_count=0)
        assert report.aggregation == query_patch_cost(1, mc.num_patches, 2, 3, 4)
        assert report.tokenization == conventional_patch_cost(1, mc.num_patches, 2, 3, 4)
