"""Tests for analytic cost accounting and the multiply-counting oracle."""

import csv
import io

import numpy as np
import pytest

from avskim import ModelConfig, WeightStore, init_weights, tiny_config
from avskim.config import declare_layers
from avskim.nn_core import ShapeError, layer_cost
from avskim.profiler import MAC_CONVENTION, profile
from avskim.reference import count_oracle


class TestProfile:
    def test_totals_are_row_sums(self):
        r = profile(ModelConfig())
        assert r.total_params == sum(row.params for row in r.rows)
        assert r.total_macs_per_s == sum(row.macs_per_s for row in r.rows)
        for name, (p, m) in r.subsystems.items():
            assert p == sum(row.params for row in r.rows if row.subsystem == name)
            assert m == sum(row.macs_per_s for row in r.rows if row.subsystem == name)

    def test_matches_layer_cost(self):
        cfg = ModelConfig()
        r = profile(cfg)
        for row, decl in zip(r.rows, declare_layers(cfg)):
            assert (row.params, row.macs_per_frame) == layer_cost(decl.spec)

    def test_every_weight_in_one_row(self):
        cfg = tiny_config()
        w = init_weights(cfg, 0)
        r = profile(cfg, w)
        owners = {name: [row.path for row in r.rows if name.rsplit(".", 1)[0] == row.path] for name in w}
        assert all(len(v) == 1 for v in owners.values())
        assert r.total_params == w.num_params()

    def test_orphan_rejected(self):
        cfg = tiny_config()
        w = WeightStore(dict(init_weights(cfg, 0), **{"visual.extra.weight": np.zeros(2)}))
        with pytest.raises(ShapeError, match="orphan"):
            profile(cfg, w)

    def test_visual_budget(self):
        p, m = profile(ModelConfig()).subsystem("visual")
        assert p <= 200_000 and m <= 3.0e9

    def test_acoustic_delta_is_subsystem_sum(self):
        on, off = profile(ModelConfig()), profile(ModelConfig(use_acoustic_encoder=False))
        p, m = on.subsystem("acoustic")
        assert on.total_params - off.total_params == p
        assert on.total_macs_per_s - off.total_macs_per_s == m
        # the published increment is about 0.51M / 1.03G; allow +-20%
        assert 0.8 * 0.5138e6 <= p <= 1.2 * 0.5138e6
        assert 0.8 * 1.0261e9 <= m <= 1.2 * 1.0261e9

    def test_full_budget(self):
        r = profile(ModelConfig())
        assert abs(r.total_params / 8.5703e6 - 1) <= 0.2
        assert abs(float(r.total_macs_per_s) / 8.923e9 - 1) <= 0.2

    def test_rate_linearity(self):
        base = profile(ModelConfig())
        double = profile(ModelConfig(sample_rate=32000))
        for a, b in zip(base.rows, double.rows):
            if a.subsystem == "visual":
                assert a.macs_per_s == b.macs_per_s
            else:
                assert b.macs_per_s == 2 * a.macs_per_s
            assert a.params == b.params

    def test_stable(self):
        assert profile(ModelConfig()).to_text() == profile(ModelConfig()).to_text()

    def test_text_and_csv(self):
        r = profile(ModelConfig())
        text = r.to_text()
        assert MAC_CONVENTION in text
        assert "visual.block3.dw" in text and "total" in text
        rows = list(csv.DictReader(io.StringIO(r.to_csv())))
        layer_rows = [x for x in rows if not x["path"].startswith("total")]
        assert len(layer_rows) == len(r.rows)
        assert float(rows[-1]["macs_per_s"]) == float(r.total_macs_per_s)


class TestCountOracle:
    @pytest.mark.parametrize("use_acoustic", [True, False])
    def test_tiny_model_exact(self, use_acoustic):
        cfg = tiny_config(use_acoustic_encoder=use_acoustic)
        r = profile(cfg)
        counts = count_oracle(cfg, init_weights(cfg, 0)).counts
        assert set(counts) == {row.path for row in r.rows}
        for row in r.rows:
            assert counts[row.path] == row.macs_per_s, row.path

    def test_acoustic_delta_matches_counts(self):
        on, off = tiny_config(), tiny_config(use_acoustic_encoder=False)
        delta = count_oracle(on, init_weights(on, 0)).total - count_oracle(off, init_weights(off, 0)).total
        assert delta == profile(on).total_macs_per_s - profile(off).total_macs_per_s

    def test_doubled_rate(self):
        cfg = tiny_config(sample_rate=800)
        counts = count_oracle(cfg, init_weights(cfg, 0)).counts
        base = count_oracle(tiny_config(), init_weights(tiny_config(), 0)).counts
        for path, n in counts.items():
            assert n == (base[path] if path.startswith("visual.") else 2 * base[path])
