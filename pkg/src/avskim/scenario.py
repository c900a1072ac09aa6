"""Seeded two-speaker mixtures for the overlap, switch and sequential scenarios.

Speech-like synthetic sources stand in for real utterances: a vibrato
harmonic carrier under a syllable-rate envelope, paired with 64x64 "lip"
frames whose mouth opening follows the audio energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn_core import F32

KINDS = ("overlap", "switch", "sequential")
SNR_RANGE = (-10.0, 10.0)
# Generated and scaled tracks are rounded to this step so that sums of two
# tracks (|x| < 8) are exact in float32 and can be undone exactly.
SAMPLE_GRID = 2.0**-20


def on_grid(x: np.ndarray) -> np.ndarray:
    return (np.round(np.asarray(x, np.float64) / SAMPLE_GRID) * SAMPLE_GRID).astype(F32)


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, np.float64)
    return float(np.sqrt(np.mean(x * x))) if len(x) else 0.0


def _envelope(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.1) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.1, 0.3) * sample_rate)
        bump = rng.uniform(0.4, 1.0) * np.hanning(length)
        stop = min(n, pos + length)
        env[pos:stop] += bump[: stop - pos]
        pos += int(rng.uniform(0.15, 0.35) * sample_rate)
    return np.clip(env, 0.0, 1.0) + 0.01


def _lip_frames(openness: np.ndarray, rng: np.random.Generator, hw: int) -> np.ndarray:
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    cy, cx = (hw - 1) / 2 + rng.uniform(-2, 2), (hw - 1) / 2 + rng.uniform(-2, 2)
    half_w = hw * rng.uniform(0.22, 0.3)
    texture = 0.02 * rng.standard_normal((hw, hw))
    frames = np.empty((len(openness), hw, hw))
    for f, o in enumerate(openness):
        half_h = hw * (0.03 + 0.25 * o)
        r = ((xx - cx) / half_w) ** 2 + ((yy - cy) / half_h) ** 2
        mouth = np.clip((1.0 - r) * 4.0 + 0.5, 0.0, 1.0)
        frames[f] = 0.25 + texture + 0.6 * mouth
    return np.clip(frames, 0.0, 1.0).astype(F32)


def synth_source(seed: int, duration_s: float, sample_rate: int = 16000, fps: float = 25, hw: int = 64):
    """Return a seeded ``(audio, lip_frames)`` pair for one synthetic talker."""
    if duration_s < 0.5:
        raise ValueError("sources must last at least 0.5 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 240.0)
    inst = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst) / sample_rate
    carrier = np.zeros(n)
    for k in range(1, 13):
        if k * f0 * 1.05 >= sample_rate / 2:
            break
        carrier += rng.uniform(0.3, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    audio = _envelope(rng, n, sample_rate) * carrier
    audio = on_grid(0.5 * audio / np.max(np.abs(audio)))

    spf = sample_rate / fps
    n_frames = int(round(duration_s * fps))
    energy = np.array([rms(audio[int(round(f * spf)) : int(round((f + 1) * spf))]) for f in range(n_frames)])
    openness = energy / energy.max() if energy.max() > 0 else energy
    return audio, _lip_frames(openness, rng, hw)


def normalize_energy(signal: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Scale ``signal`` to the RMS of ``anchor``."""
    r_sig, r_anchor = rms(signal), rms(anchor)
    if r_sig <= 0.0 or r_anchor <= 0.0:
        raise ValueError("cannot normalise energy against a silent signal")
    if r_sig == r_anchor:
        return np.asarray(signal, F32).copy()
    return (np.asarray(signal, np.float64) * (r_anchor / r_sig)).astype(F32)


def mix_at_snr(anchor: np.ndarray, other: np.ndarray, snr_db: float):
    """Add ``other`` at ``snr_db`` relative to ``anchor``; returns ``(mix, scaled_other)``.

    ``other`` should already be energy-normalised to ``anchor``. The shorter
    signal is zero-padded at the tail.
    """
    anchor = np.asarray(anchor, F32)
    other = np.asarray(other, F32)
    n = max(len(anchor), len(other))
    anchor = np.pad(anchor, (0, n - len(anchor)))
    other = np.pad(other, (0, n - len(other)))
    scaled = on_grid(other.astype(np.float64) * 10.0 ** (snr_db / 20.0))
    return anchor + scaled, scaled


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    duration_s: float = 4.0
    snr_db: float = 0.0
    switch_time_s: Optional[float] = None
    seed: int = 0
    sample_rate: int = 16000
    fps: float = 25
    lip_hw: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}; expected one of {KINDS}")
        if not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ValueError(f"snr {self.snr_db} dB outside {SNR_RANGE}")
        if self.switch_time_s is not None:
            if self.kind == "overlap":
                raise ValueError("the overlap scenario has no switch time")
            if not 0 < self.switch_time_s < self.duration_s:
                raise ValueError("switch time must lie strictly inside the utterance")


@dataclass
class MixtureRecord:
    mix: np.ndarray
    target: np.ndarray
    interferer: np.ndarray
    target_video: np.ndarray
    switch_time_s: Optional[float]
    metadata: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def achieved_snr_db(self) -> float:
        """Level of the scaled non-anchor track relative to the anchor track."""
        other = self.sources[self.metadata["interferer_source"]]
        return 20.0 * np.log10(rms(other) / rms(self.sources["A"]))


def make_scenario(spec: ScenarioSpec) -> MixtureRecord:
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(spec.seed).spawn(3)]
    switch = spec.switch_time_s
    if switch is None and spec.kind != "overlap":
        switch = float(np.random.default_rng(spec.seed).uniform(0.25, 0.75) * spec.duration_s)
    src = [synth_source(s, spec.duration_s, spec.sample_rate, spec.fps, spec.lip_hw) for s in seeds]
    (a, va), (b, vb), (c, _) = src
    spf = spec.sample_rate / spec.fps
    meta = dict(
        kind=spec.kind,
        seed=spec.seed,
        snr_db=spec.snr_db,
        switch_time_s=switch,
        speaker_seeds=seeds,
        sample_rate=spec.sample_rate,
        fps=spec.fps,
        duration_s=spec.duration_s,
    )
    if spec.kind in ("overlap", "switch"):
        _, b_scaled = mix_at_snr(a, normalize_energy(b, a), spec.snr_db)
        sources = {"A": a, "B": b_scaled}
        meta["interferer_source"] = "B"
        if spec.kind == "overlap":
            target, interferer, video = a, b_scaled, va
        else:
            k = int(round(switch * spec.sample_rate))
            target = np.concatenate([a[:k], b_scaled[k:]])
            interferer = np.concatenate([b_scaled[:k], a[k:]])
            video = _switch_video(va, vb, k, spf)
    else:
        k = int(round(switch * spec.sample_rate))
        _, b_target = mix_at_snr(a, normalize_energy(b, a), 0.0)
        _, c_scaled = mix_at_snr(a, normalize_energy(c, a), spec.snr_db)
        target = np.concatenate([a[:k], b_target[k:]])
        interferer = c_scaled
        video = _switch_video(va, vb, k, spf)
        sources = {"A": a, "B": b_target, "C": c_scaled}
        meta["interferer_source"] = "C"
    mix = target + interferer
    return MixtureRecord(mix, target, interferer, video, switch, meta, sources)


def _switch_video(va: np.ndarray, vb: np.ndarray, k: int, spf: float) -> np.ndarray:
    starts = np.arange(len(va)) * spf
    return np.where((starts < k)[:, None, None], va, vb).astype(F32)
