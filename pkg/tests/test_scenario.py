"""Tests for the seeded scenario simulator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avskim.losses import evaluate
from avskim.scenario import (
    KINDS,
    ScenarioSpec,
    make_scenario,
    mix_at_snr,
    normalize_energy,
    rms,
    synth_source,
)

F32 = np.float32


class TestSynthSource:
    def test_deterministic(self):
        a1, v1 = synth_source(5, 1.0)
        a2, v2 = synth_source(5, 1.0)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(v1, v2)
        assert not np.array_equal(a1, synth_source(6, 1.0)[0])

    @pytest.mark.parametrize("duration", [0.5, 1.0, 1.23, 3.0])
    def test_frame_count(self, duration):
        a, v = synth_source(0, duration)
        assert len(v) == round(duration * 25)
        assert len(a) == round(duration * 16000)
        assert v.shape[1:] == (64, 64)
        assert v.min() >= 0 and v.max() <= 1

    @pytest.mark.parametrize("seed", range(5))
    def test_video_tracks_envelope(self, seed):
        a, v = synth_source(seed, 2.0)
        energy = [rms(a[f * 640 : (f + 1) * 640]) for f in range(len(v))]
        assert np.corrcoef(energy, v.mean(axis=(1, 2)))[0, 1] >= 0.9

    def test_too_short(self):
        with pytest.raises(ValueError):
            synth_source(0, 0.4)


class TestNormalizeEnergy:
    def test_unchanged_when_equal(self):
        a, _ = synth_source(1, 1.0)
        np.testing.assert_array_equal(normalize_energy(a, a), a)

    def test_half_amplitude_doubles(self):
        a, _ = synth_source(1, 1.0)
        half = (0.5 * a).astype(F32)
        np.testing.assert_array_equal(normalize_energy(half, a), a)

    @given(st.integers(0, 1000), st.floats(0.01, 100))
    @settings(max_examples=20, deadline=None)
    def test_rms_matches(self, seed, gain):
        rng = np.random.default_rng(seed)
        sig = (gain * rng.standard_normal(1000)).astype(F32)
        anchor = rng.standard_normal(1200).astype(F32)
        assert rms(normalize_energy(sig, anchor)) == pytest.approx(rms(anchor), rel=1e-6)

    def test_silent(self):
        with pytest.raises(ValueError):
            normalize_energy(np.ones(10, F32), np.zeros(10, F32))
        with pytest.raises(ValueError):
            normalize_energy(np.zeros(10, F32), np.ones(10, F32))


class TestMixAtSnr:
    def test_zero_db_equal_power(self):
        a, _ = synth_source(1, 1.0)
        b = normalize_energy(synth_source(2, 1.0)[0], a)
        _, scaled = mix_at_snr(a, b, 0.0)
        assert abs(20 * np.log10(rms(scaled) / rms(a))) < 1e-4

    def test_minus_20_db_scale(self):
        a = np.ones(64, F32)
        _, scaled = mix_at_snr(a, np.full(64, 0.5, F32), -20.0)
        assert scaled[0] == pytest.approx(0.05, abs=2**-20)

    @given(st.integers(0, 500), st.floats(-10, 10))
    @settings(max_examples=25, deadline=None)
    def test_exact_reconstruction(self, seed, snr_db):
        a, _ = synth_source(seed, 0.5)
        b = normalize_energy(synth_source(seed + 1, 0.5)[0], a)
        mix, scaled = mix_at_snr(a, b, snr_db)
        np.testing.assert_array_equal(mix - scaled, a)
        assert abs(20 * np.log10(rms(scaled) / rms(a)) - snr_db) <= 0.1

    def test_tail_padding(self):
        mix, scaled = mix_at_snr(np.ones(5, F32), np.ones(3, F32), 0.0)
        np.testing.assert_array_equal(scaled, [1, 1, 1, 0, 0])
        np.testing.assert_array_equal(mix, [2, 2, 2, 1, 1])
        mix, _ = mix_at_snr(np.ones(2, F32), np.ones(4, F32), 0.0)
        np.testing.assert_array_equal(mix, [2, 2, 1, 1])


class TestScenarios:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("snr_db", [-10.0, 0.0, 10.0])
    def test_invariants(self, kind, snr_db):
        rec = make_scenario(ScenarioSpec(kind, 2.0, snr_db, seed=3))
        np.testing.assert_array_equal(rec.mix, rec.target + rec.interferer)
        assert len(rec.mix) == len(rec.target) == len(rec.interferer) == 32000
        assert len(rec.target_video) == 50
        assert abs(rec.achieved_snr_db() - snr_db) <= 0.1
        assert rec.metadata["seed"] == 3 and rec.metadata["snr_db"] == snr_db

    def test_overlap(self):
        rec = make_scenario(ScenarioSpec("overlap", 2.0, 4.0, seed=1))
        a, va = synth_source(rec.metadata["speaker_seeds"][0], 2.0)
        np.testing.assert_array_equal(rec.target, a)
        np.testing.assert_array_equal(rec.target_video, va)
        np.testing.assert_array_equal(rec.interferer, rec.sources["B"])
        assert rec.switch_time_s is None

    def test_switch(self):
        rec = make_scenario(ScenarioSpec("switch", 2.0, 0.0, switch_time_s=1.0, seed=2))
        seeds = rec.metadata["speaker_seeds"]
        (a, va), (_, vb) = synth_source(seeds[0], 2.0), synth_source(seeds[1], 2.0)
        b = rec.sources["B"]
        np.testing.assert_array_equal(rec.target, np.concatenate([a[:16000], b[16000:]]))
        np.testing.assert_array_equal(rec.interferer, np.concatenate([b[:16000], a[16000:]]))
        np.testing.assert_array_equal(rec.target_video[:25], va[:25])
        np.testing.assert_array_equal(rec.target_video[25:], vb[25:])

    def test_sequential(self):
        rec = make_scenario(ScenarioSpec("sequential", 2.0, 0.0, switch_time_s=0.8, seed=4))
        k = int(0.8 * 16000)
        assert rms(rec.interferer[:k]) > 0.01 and rms(rec.interferer[k:]) > 0.01
        seeds = rec.metadata["speaker_seeds"]
        vc = synth_source(seeds[2], 2.0)[1]
        for frame in rec.target_video:
            assert not any(np.array_equal(frame, c) for c in vc)
        np.testing.assert_array_equal(rec.target[:k], rec.sources["A"][:k])
        np.testing.assert_array_equal(rec.target[k:], rec.sources["B"][k:])

    def test_default_switch_time(self):
        rec = make_scenario(ScenarioSpec("switch", 4.0, seed=9))
        assert 1.0 <= rec.switch_time_s <= 3.0

    def test_deterministic(self):
        spec = ScenarioSpec("sequential", 1.0, -3.0, seed=11)
        r1, r2 = make_scenario(spec), make_scenario(spec)
        np.testing.assert_array_equal(r1.mix, r2.mix)
        np.testing.assert_array_equal(r1.target_video, r2.target_video)
        assert r1.metadata == r2.metadata

    def test_switch_evaluation_partitions(self):
        rec = make_scenario(ScenarioSpec("switch", 2.0, 0.0, switch_time_s=0.7, seed=5))
        est = rec.target + 0.3 * rec.interferer
        r = evaluate(rec.mix, rec.target, est, rec.switch_time_s)
        k = int(round(0.7 * 16000))
        before = evaluate(rec.mix[:k], rec.target[:k], est[:k])
        after = evaluate(rec.mix[k:], rec.target[k:], est[k:])
        assert r.si_snri_before == before.si_snri_all
        assert r.si_snri_after == after.si_snri_all

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="party"),
            dict(kind="overlap", snr_db=11.0),
            dict(kind="overlap", snr_db=-10.5),
            dict(kind="overlap", switch_time_s=1.0),
            dict(kind="switch", switch_time_s=0.0),
            dict(kind="switch", switch_time_s=4.0),
        ],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            ScenarioSpec(**kwargs)
