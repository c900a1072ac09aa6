"""Tests for the file formats and the command-line interface."""

import json
import struct

import numpy as np
import pytest
from scipy.io import wavfile

from avskim import ModelConfig, init_weights, tiny_config
from avskim import fileio
from avskim.cli import main
from avskim.fileio import FormatError

F32 = np.float32

# a 16 kHz model small enough for end-to-end CLI runs
SMALL = dict(
    enc_channels=16,
    skim_hidden=16,
    skim_layers=2,
    visual_channels=(4, 4, 8, 8, 8, 8),
    visual_dim=8,
    acoustic_dim=8,
    acoustic_channels=(16, 16, 16),
)


class TestWeightFile:
    def test_round_trip(self, tmp_path):
        w = init_weights(tiny_config(), 3)
        p = tmp_path / "w.avsew"
        fileio.save_weights(p, w)
        assert fileio.load_weights(p).identical(w)

    def test_layout(self, tmp_path):
        p = tmp_path / "w.avsew"
        fileio.save_weights(p, {"ab": np.array([[1.5, -2.0]], F32)})
        raw = p.read_bytes()
        expected = b"AVSEW001" + struct.pack("<IH", 1, 2) + b"ab" + struct.pack("<BII", 2, 1, 2) + struct.pack("<2f", 1.5, -2.0)
        assert raw == expected

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "w.avsew"
        p.write_bytes(b"AVSEW002" + bytes(4))
        with pytest.raises(FormatError, match="magic"):
            fileio.load_weights(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "w.avsew"
        fileio.save_weights(p, init_weights(tiny_config(), 0))
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            fileio.load_weights(p)


class TestFeatureFile:
    def test_round_trip(self, tmp_path):
        v = np.random.default_rng(0).uniform(0, 1, (5, 8, 6)).astype(F32)
        p = tmp_path / "v.avsev"
        fileio.save_features(p, v, 25)
        got, fps = fileio.load_features(p)
        np.testing.assert_array_equal(got, v)
        assert fps == 25

    def test_payload_mismatch(self, tmp_path):
        p = tmp_path / "v.avsev"
        fileio.save_features(p, np.zeros((2, 4, 4), F32), 25)
        p.write_bytes(p.read_bytes() + b"\0\0\0\0")
        with pytest.raises(FormatError, match="payload"):
            fileio.load_features(p)

    def test_zero_fps(self, tmp_path):
        p = tmp_path / "v.avsev"
        p.write_bytes(b"AVSEV001" + struct.pack("<IHHH", 0, 4, 4, 0))
        with pytest.raises(FormatError, match="fps"):
            fileio.load_features(p)

    def test_rejects_fractional_fps_and_range(self, tmp_path):
        with pytest.raises(FormatError):
            fileio.save_features(tmp_path / "a", np.zeros((1, 2, 2), F32), 12.5)
        with pytest.raises(FormatError):
            fileio.save_features(tmp_path / "b", np.full((1, 2, 2), 1.5, F32), 25)


class TestWav:
    def test_silence_float(self, tmp_path):
        p = tmp_path / "s.wav"
        fileio.save_wav(p, np.zeros(1000, F32))
        np.testing.assert_array_equal(fileio.load_wav(p), np.zeros(1000))

    def test_float_bit_exact(self, tmp_path):
        x = np.random.default_rng(1).uniform(-1, 1, 777).astype(F32)
        p = tmp_path / "x.wav"
        fileio.save_wav(p, x)
        np.testing.assert_array_equal(fileio.load_wav(p), x)

    def test_pcm16_sine(self, tmp_path):
        t = np.arange(16000) / 16000
        x = (np.sin(2 * np.pi * 440 * t) * 32767 / 32768).astype(F32)
        p = tmp_path / "sine.wav"
        fileio.save_wav(p, x, pcm16=True)
        y = fileio.load_wav(p)
        assert y.dtype == F32
        assert np.abs(y - x).max() <= 1 / 32768

    def test_stereo_rejected(self, tmp_path):
        p = tmp_path / "st.wav"
        wavfile.write(p, 16000, np.zeros((100, 2), np.int16))
        with pytest.raises(FormatError, match="mono"):
            fileio.load_wav(p)

    def test_rate_rejected(self, tmp_path):
        p = tmp_path / "r.wav"
        wavfile.write(p, 8000, np.zeros(100, np.int16))
        with pytest.raises(FormatError, match="16000"):
            fileio.load_wav(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.wav"
        p.write_bytes(b"RIFF\x24\x00\x00\x00WAVEfmt ")
        with pytest.raises(FormatError):
            fileio.load_wav(p)


# -- CLI -----------------------------------------------------------------------------


@pytest.fixture
def small_model(tmp_path):
    cfg = ModelConfig(**SMALL)
    cfg_path = tmp_path / "small.json"
    cfg_path.write_text(cfg.to_json())
    w_path = tmp_path / "small.avsew"
    assert main(["init-weights", "--config", str(cfg_path), "--seed", "2", "--out", str(w_path)]) == 0
    return cfg_path, w_path


def simulate(tmp_path, duration=4):
    out = tmp_path / "sim"
    args = ["simulate", "--scenario", "switch", "--snr", "0", "--switch-time", str(duration / 2), "--seed", "7",
            "--duration", str(duration), "--out-dir", str(out)]
    assert main(args) == 0
    return out


class TestCli:
    def test_simulate_then_eval_identity(self, tmp_path, capsys):
        out = simulate(tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7 and manifest["switch_time_s"] == 2.0
        assert abs(manifest["achieved_snr_db"]) <= 0.1
        capsys.readouterr()
        mix = str(out / "mix.wav")
        assert main(["eval", "--est", mix, "--target", str(out / "target.wav"), "--mix", mix, "--switch-time", "2"]) == 0
        text = capsys.readouterr().out
        result = json.loads(text.strip().splitlines()[-1])
        assert set(result) == {"si_snri_all", "snri_all", "si_snri_before", "si_snri_after"}
        assert all(v == 0.0 for v in result.values())
        assert "0.00 dB" in text

    def test_simulate_deterministic(self, tmp_path):
        a = simulate(tmp_path / "a")
        b = simulate(tmp_path / "b")
        for name in ("mix.wav", "target.wav", "video.avsev", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_extract_streaming_matches_offline(self, tmp_path, small_model):
        cfg_path, w_path = small_model
        out = simulate(tmp_path, 3)
        common = ["extract", "--mix", str(out / "mix.wav"), "--video", str(out / "video.avsev"),
                  "--weights", str(w_path), "--config", str(cfg_path)]
        assert main(common + ["--out", str(tmp_path / "off.wav")]) == 0
        assert main(common + ["--out", str(tmp_path / "on.wav"), "--streaming", "--chunk-ms", "1"]) == 0
        off, on = fileio.load_wav(tmp_path / "off.wav"), fileio.load_wav(tmp_path / "on.wav")
        mix = fileio.load_wav(out / "mix.wav")
        assert len(off) == len(on) == len(mix)
        assert np.abs(off - on).max() <= 1e-5

    def test_extract_no_ar(self, tmp_path, small_model):
        cfg_path, w_path = small_model
        out = simulate(tmp_path, 1)
        args = ["extract", "--mix", str(out / "mix.wav"), "--video", str(out / "video.avsev"), "--weights", str(w_path),
                "--config", str(cfg_path), "--no-ar", "--streaming", "--chunk-ms", "7", "--out", str(tmp_path / "y.wav")]
        assert main(args) == 0

    def test_extract_bad_weights(self, tmp_path, small_model):
        cfg_path, _ = small_model
        out = simulate(tmp_path, 1)
        bad = tmp_path / "bad.avsew"
        fileio.save_weights(bad, init_weights(tiny_config(), 0))
        args = ["extract", "--mix", str(out / "mix.wav"), "--video", str(out / "video.avsev"), "--weights", str(bad),
                "--config", str(cfg_path), "--out", str(tmp_path / "y.wav")]
        assert main(args) == 1

    def test_profile(self, tmp_path, capsys):
        csv_path = tmp_path / "p.csv"
        assert main(["profile", "--csv", str(csv_path)]) == 0
        text = capsys.readouterr().out
        visual = next(line for line in text.splitlines() if line.startswith("visual "))
        params_m, macs_g = float(visual.split()[1]), float(visual.split()[3])
        assert params_m <= 0.2 and macs_g <= 3.0
        assert csv_path.read_text().startswith("path,subsystem")

    def test_bench(self, capsys):
        assert main(["bench", "--config", "tiny", "--duration", "1"]) == 0
        assert "RTF" in capsys.readouterr().out

    def test_paris_demo(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(ModelConfig(**SMALL).to_json())
        assert main(["paris-demo", "--seed", "3", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "L1" in out and "L2" in out and "holds exactly" in out

    def test_usage_errors(self, capsys):
        assert main([]) == 2
        assert main(["simulate", "--bogus"]) == 2
        assert main(["frobnicate"]) == 2
        assert main(["simulate", "--scenario", "switch", "--snr", "loud", "--out-dir", "x"]) == 2

    def test_data_errors(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.wav")
        assert main(["eval", "--est", missing, "--target", missing, "--mix", missing]) == 1
        assert "nope.wav" in capsys.readouterr().err
        assert main(["simulate", "--scenario", "overlap", "--snr", "20", "--out-dir", str(tmp_path)]) == 1
