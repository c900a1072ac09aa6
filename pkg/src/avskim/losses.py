"""Training losses, improvement metrics and the two-pass PARIS forward."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import get_window

EPS = 1e-8
DB_CAP = 60.0

# (window, hop) pairs of the multi-resolution delta-spectrum loss
RESOLUTIONS = ((256, 64), (512, 128), (1024, 256))
PASS1_FREQ_WEIGHT = 0.25
PASS2_FREQ_WEIGHT = 0.75
# Loss terms are rounded to this fixed-point step so that weighted sums of
# them are exact in float64 (|term| < 2**20 leaves 52 bits of headroom).
LOSS_QUANTUM = 2.0**-30
# SI-SNR is reported on a 2**-20 dB grid (about 1e-6 dB). Rescaling the
# estimate moves the unrounded value by ~1e-14 dB, so the grid makes the
# metric's scale invariance hold exactly rather than to rounding error.
METRIC_GRID = 2.0**-20


def _pair(s, est):
    s = np.asarray(s, np.float64).reshape(-1)
    est = np.asarray(est, np.float64).reshape(-1)
    if s.shape != est.shape or len(s) == 0:
        raise ValueError(f"signals must be non-empty and equally long ({len(s)} vs {len(est)})")
    return s, est


def _ratio_db(num: float, den: float, scale: float) -> float:
    """``scale * log10(num / den)``, saturating at +-60 dB when a term vanishes."""
    if den < EPS:
        return DB_CAP if num >= EPS else 0.0
    if num < EPS:
        return -DB_CAP
    return float(np.clip(scale * np.log10(num / den), -DB_CAP, DB_CAP))


def si_snr(s, est) -> float:
    """Scale-invariant SNR in dB (no mean removal), on a 2**-20 dB grid."""
    s, est = _pair(s, est)
    energy = float(s @ s)
    if energy < EPS:
        raise ValueError("reference signal is silent")
    proj = (float(est @ s) / energy) * s
    db = _ratio_db(float(np.linalg.norm(proj)), float(np.linalg.norm(est - proj)), 20.0)
    return round(db / METRIC_GRID) * METRIC_GRID


def snr(s, est) -> float:
    """Scale-sensitive SNR in dB."""
    s, est = _pair(s, est)
    energy = float(s @ s)
    if energy < EPS:
        raise ValueError("reference signal is silent")
    resid = s - est
    return _ratio_db(energy, float(resid @ resid), 10.0)


def magnitude_spectrogram(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    """``[frames, window // 2 + 1]`` Hann-windowed STFT magnitudes, no padding."""
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.abs(np.fft.rfft(frames * get_window("hann", window), axis=-1))


def freq_delta_loss(s, est, resolutions=RESOLUTIONS) -> float:
    """Multi-resolution magnitude + first-order delta spectrum L1 distance.

    Resolutions whose window exceeds the signal length are skipped; a signal
    shorter than every window raises ``ValueError``.
    """
    s, est = _pair(s, est)
    total, used = 0.0, 0
    for window, hop in resolutions:
        if len(s) < window:
            continue
        ms = magnitude_spectrogram(s, window, hop)
        me = magnitude_spectrogram(est, window, hop)
        total += float(np.mean(np.abs(ms - me)))
        if len(ms) > 1:
            total += float(np.mean(np.abs(np.diff(ms, axis=0) - np.diff(me, axis=0))))
        used += 1
    if not used:
        raise ValueError(f"signal of {len(s)} samples is shorter than every STFT window")
    return total


FREQ_LOSSES: dict = {"delta_spectrum": freq_delta_loss}


def get_freq_loss(name: str) -> Callable:
    try:
        return FREQ_LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown frequency loss {name!r}; known: {sorted(FREQ_LOSSES)}") from None


def quantize_loss(value: float) -> float:
    return round(value / LOSS_QUANTUM) * LOSS_QUANTUM


def freq_term(s, est, freq_loss: str = "delta_spectrum") -> float:
    """The frequency-domain loss as it enters the hybrid losses."""
    return quantize_loss(get_freq_loss(freq_loss)(s, est))


def hybrid_loss(s, est, freq_weight: float, freq_loss: str = "delta_spectrum") -> float:
    """``-si_snr + freq_weight * L_freq`` with both terms on the loss grid."""
    return -quantize_loss(si_snr(s, est)) + freq_weight * freq_term(s, est, freq_loss)


def loss_pass1(s, est1, freq_loss: str = "delta_spectrum") -> float:
    return hybrid_loss(s, est1, PASS1_FREQ_WEIGHT, freq_loss)


def loss_pass2(s, est2, freq_loss: str = "delta_spectrum") -> float:
    return hybrid_loss(s, est2, PASS2_FREQ_WEIGHT, freq_loss)


@dataclass
class ParisResult:
    est1: np.ndarray
    est2: np.ndarray
    loss1: float
    loss2: float


def paris_two_pass(model, x, v, target) -> ParisResult:
    """Two forward passes with shared weights.

    Pass 1 uses the zero acoustic placeholder; pass 2 feeds the pass-1
    estimate to the acoustic encoder as pseudo past output. No third pass.
    """
    if not model.config.use_acoustic_encoder:
        raise ValueError("the two-pass procedure needs a model with an acoustic encoder")
    est1 = model.forward_offline(x, v, use_ar=False)
    est2 = model.forward_offline(x, v, use_ar=True, feedback=est1)
    return ParisResult(est1, est2, loss_pass1(target, est1), loss_pass2(target, est2))


@dataclass
class EvalBreakdown:
    si_snri_all: float
    snri_all: float
    si_snri_before: Optional[float] = None
    si_snri_after: Optional[float] = None
    si_snri_without: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_text(self) -> str:
        return "\n".join(f"{k:<16}{v:8.2f} dB" for k, v in self.to_dict().items())


def _improvement(metric, target, mix, est) -> float:
    return metric(target, est) - metric(target, mix)


def evaluate(mix, target, est, switch_time: Optional[float] = None, sample_rate: int = 16000) -> EvalBreakdown:
    """SI-SNRi / SNRi over the utterance, split at ``switch_time`` if given."""
    mix, target = _pair(mix, target)
    _, est = _pair(target, est)
    out = EvalBreakdown(_improvement(si_snr, target, mix, est), _improvement(snr, target, mix, est))
    if switch_time is None:
        out.si_snri_without = out.si_snri_all
        return out
    k = int(round(switch_time * sample_rate))
    if not 0 < k < len(target):
        raise ValueError(f"switch time {switch_time} s is outside the {len(target) / sample_rate:.3f} s signal")
    out.si_snri_before = _improvement(si_snr, target[:k], mix[:k], est[:k])
    out.si_snri_after = _improvement(si_snr, target[k:], mix[k:], est[k:])
    return out
