"""Frame-synchronous streaming extraction with autoregressive self-feedback.

A :class:`StreamSession` consumes audio in chunks of any size and emits every
output sample as soon as it can no longer change. Work is always done one
encoder frame at a time, so the emitted signal does not depend on how the
input was chunked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn_core as nn
from .config import ModelConfig
from .model import FEEDBACK_DELAY, AVSkimModel
from .nn_core import F32
from .weights import WeightStore, init_weights

STAGES = ("encoder", "visual", "acoustic", "extractor", "decoder")


class FeedbackBuffer:
    """Recently emitted samples, addressed by absolute sample index.

    Reading an index that has not been emitted yet raises, which is how the
    session guarantees the acoustic encoder only sees final output.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data = np.zeros(capacity, F32)
        self.emitted = 0
        self.max_read = -1

    def append(self, samples: np.ndarray) -> None:
        n = len(samples)
        self._data = np.concatenate([self._data[n:], samples]) if n < self.capacity else samples[-self.capacity :].copy()
        self.emitted += n

    def read(self, start: int, stop: int) -> np.ndarray:
        if stop > self.emitted:
            raise RuntimeError(f"feedback read up to sample {stop - 1} but only {self.emitted} emitted")
        lo = max(start, 0)
        base = self.emitted - self.capacity
        if lo < base:
            raise RuntimeError("feedback read beyond buffer capacity")
        self.max_read = max(self.max_read, stop - 1)
        out = np.zeros(stop - start, F32)
        if stop > lo:
            out[lo - start :] = self._data[lo - base : stop - base]
        return out


@dataclass
class RtfReport:
    audio_seconds: float
    wall_seconds: float
    rtf: float
    stages: dict = field(default_factory=dict)
    chunk_ms: float = 0.0
    use_ar: bool = True

    def to_text(self) -> str:
        lines = [
            f"audio      {self.audio_seconds:8.3f} s",
            f"wall       {self.wall_seconds:8.3f} s",
            f"RTF        {self.rtf:8.3f}  ({'faster' if self.rtf < 1 else 'slower'} than real time)",
            f"chunk      {self.chunk_ms:8.1f} ms   autoregressive={self.use_ar}",
        ]
        for name, secs in self.stages.items():
            lines.append(f"  {name:<10}{secs:8.3f} s")
        return "\n".join(lines)


class StreamSession:
    """All recurrent state for one online extraction run."""

    def __init__(self, model: AVSkimModel, use_ar: Optional[bool] = None, timing: bool = False):
        self.model = model
        self.config = model.config
        if use_ar is None:
            use_ar = self.config.use_acoustic_encoder
        if use_ar and not self.config.use_acoustic_encoder:
            raise ValueError("use_ar requested but the model has no acoustic encoder")
        self.use_ar = use_ar
        self.timing = timing
        self.reset()

    def reset(self) -> None:
        c, m = self.config, self.model
        h = c.skim_hidden
        self.stage_seconds = dict.fromkeys(STAGES, 0.0)
        self.frames_done = 0
        self.samples_in = 0
        self.closed = False
        self.late_video = 0
        self._pending = np.zeros(c.enc_kernel - c.enc_stride, F32)
        self._vis_hist = m.visual_history()
        self._vis = []
        self._blocks = [(np.zeros(h, F32), np.zeros(h, F32)) for _ in m.blocks]
        self._mem = [(nn.LstmState.zeros(h), nn.LstmState.zeros(h)) for _ in m.mems]
        self._init = [None] * len(m.blocks)
        self._tail = np.zeros(c.enc_stride, F32)
        self.feedback = FeedbackBuffer(4 * c.enc_kernel)
        if self.use_ar:
            self._ac_bufs = [np.zeros((spec.in_channels, spec.kernel), F32) for spec, _, _ in m.ac_convs]
            self._ac_h = np.zeros(c.acoustic_dim, F32)
            self._ac_c = np.zeros(c.acoustic_dim, F32)

    @property
    def emitted(self) -> int:
        """Output samples released so far (excluding the synthetic pad)."""
        return max(0, self.frames_done - 1) * self.config.enc_stride

    # -- public API ---------------------------------------------------------

    def push(self, audio: np.ndarray, video: Optional[np.ndarray] = None) -> np.ndarray:
        """Consume an audio chunk and the video frames that start inside it.

        Returns the newly finalised output samples.
        """
        if self.closed:
            raise RuntimeError("session is closed")
        c = self.config
        audio = np.asarray(audio, F32).reshape(-1)
        self.samples_in += len(audio)
        if video is not None:
            video = np.asarray(video, F32)
            if video.ndim == 2:
                video = video[None]
            allowed = math.ceil(self.samples_in / c.samples_per_video_frame) + 1
            if len(self._vis) + len(video) > allowed:
                raise ValueError(
                    f"video is ahead of audio: {len(self._vis) + len(video)} frames after "
                    f"{self.samples_in} samples (at most {allowed} allowed)"
                )
            for frame in video:
                t0 = time.perf_counter() if self.timing else 0.0
                emb, self._vis_hist = self.model.visual_frame(frame, self._vis_hist)
                self._vis.append(emb)
                if self.timing:
                    self.stage_seconds["visual"] += time.perf_counter() - t0
        buf = np.concatenate([self._pending, audio])
        k, s = c.enc_kernel, c.enc_stride
        n = 0 if len(buf) < k else (len(buf) - k) // s + 1
        out = []
        for i in range(n):
            y = self._step(buf[i * s : i * s + k])
            if y is not None:
                out.append(y)
        self._pending = buf[n * s :]
        return np.concatenate(out) if out else np.zeros(0, F32)

    def close(self) -> np.ndarray:
        """Flush the last partially covered samples; total output equals total input."""
        if self.closed:
            return np.zeros(0, F32)
        self.closed = True
        tail = self._tail if self.frames_done else np.zeros(0, F32)
        missing = self.samples_in - self.emitted - len(tail)
        if missing < 0:
            tail = tail[: len(tail) + missing]
            missing = 0
        return np.concatenate([tail, np.zeros(missing, F32)])

    # -- the per-frame engine -------------------------------------------------

    def _visual_for(self, t: int) -> np.ndarray:
        idx = t // self.config.repeat_factor
        if idx < len(self._vis):
            return self._vis[idx]
        self.late_video += 1
        if self._vis:
            return self._vis[-1]
        return np.zeros(self.config.visual_dim, F32)

    def _acoustic(self, t: int) -> np.ndarray:
        """Acoustic embedding A(t) from acoustic frame ``t - FEEDBACK_DELAY``."""
        c, m = self.config, self.model
        j = t - FEEDBACK_DELAY
        s = c.enc_stride
        window = self.feedback.read(j * s - (c.enc_kernel - s), j * s + s)
        x = m.ac_enc_w @ window
        np.maximum(x, 0, out=x)
        for k, (spec, _, w2) in enumerate(m.ac_convs):
            hist = self._ac_bufs[k]
            hist[:, :-1] = hist[:, 1:]
            hist[:, -1] = x
            x = w2 @ hist.reshape(-1)
            np.maximum(x, 0, out=x)
        w_ih, w_hh, _ = m.ac_lstm
        self._ac_h, self._ac_c = nn.lstm_cell(w_ih @ x, self._ac_h, self._ac_c, w_hh)
        return self._ac_h

    def _step(self, frame: np.ndarray) -> Optional[np.ndarray]:
        c, m = self.config, self.model
        t = self.frames_done
        tm = self.timing
        clock = time.perf_counter
        if tm:
            t0 = clock()
        e = m.enc_w @ frame
        e += m.enc_b
        np.maximum(e, 0, out=e)
        if tm:
            t1 = clock()
            self.stage_seconds["encoder"] += t1 - t0
        z = m.in_w @ np.concatenate([e, self._visual_for(t)])
        z += m.in_b
        if self.use_ar and t >= FEEDBACK_DELAY:
            a = self._acoustic(t)
            z += m.fus_w @ a
        if tm:
            t2 = clock()
            self.stage_seconds["acoustic"] += t2 - t1
        seg = c.skim_segment
        seg_start = t % seg == 0
        seg_end = (t + 1) % seg == 0
        for b, (w_ih, w_hh, bias) in enumerate(m.blocks):
            if seg_start:
                if b == 0 or t == 0:
                    h, cc = np.zeros_like(z), np.zeros_like(z)
                else:
                    init = self._init[b]
                    h, cc = init.h, init.c
            else:
                h, cc = self._blocks[b]
            gx = w_ih @ z
            gx += bias
            h, cc = nn.lstm_cell(gx, h, cc, w_hh)
            self._blocks[b] = (h, cc)
            if seg_end and b < len(m.mems):
                self._init[b + 1], self._mem[b] = m.mem_update(b, nn.LstmState(h, cc), self._mem[b])
            z = z + h
        mask = m.out_w @ z
        mask += m.out_b
        np.maximum(mask, 0, out=mask)
        if c.clamp_mask:
            np.minimum(mask, 1, out=mask)
        if tm:
            t3 = clock()
            self.stage_seconds["extractor"] += t3 - t2
        y = m.dec_w @ (mask * e)
        y += m.dec_b
        s = c.enc_stride
        final = self._tail + y[:s]
        self._tail = y[s:].copy()
        self.frames_done = t + 1
        if tm:
            self.stage_seconds["decoder"] += clock() - t3
        if t == 0:
            return None  # the synthetic left pad
        self.feedback.append(final)
        return final


def open_session(config: ModelConfig, weights: WeightStore, use_ar: Optional[bool] = None, timing: bool = False) -> StreamSession:
    return StreamSession(AVSkimModel(config, weights), use_ar=use_ar, timing=timing)


def stream_signal(session: StreamSession, x: np.ndarray, v: np.ndarray, chunk: int) -> np.ndarray:
    """Push ``x`` in ``chunk``-sample pieces with the video frames starting in each piece."""
    spf = session.config.samples_per_video_frame
    out = []
    for start in range(0, len(x), chunk):
        stop = min(start + chunk, len(x))
        lo, hi = -(-start // spf), -(-stop // spf)
        out.append(session.push(x[start:stop], v[lo:hi]))
    out.append(session.close())
    return np.concatenate(out)


def measure_rtf(
    config: ModelConfig,
    duration_s: float = 1.0,
    chunk_ms: float = 10.0,
    seed: int = 0,
    weights: Optional[WeightStore] = None,
    use_ar: Optional[bool] = None,
) -> RtfReport:
    """Stream seeded noise through a session and time it."""
    if duration_s < 1.0:
        raise ValueError("duration must be at least 1 s")
    weights = weights if weights is not None else init_weights(config, seed)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * config.sample_rate))
    x = (0.1 * rng.standard_normal(n)).astype(F32)
    n_video = math.ceil(n / config.samples_per_video_frame)
    v = rng.uniform(0, 1, (n_video, config.lip_hw, config.lip_hw)).astype(F32)
    session = open_session(config, weights, use_ar=use_ar, timing=True)
    chunk = max(1, int(round(chunk_ms * config.sample_rate / 1000)))
    start = time.perf_counter()
    stream_signal(session, x, v, chunk)
    wall = time.perf_counter() - start
    audio_s = n / config.sample_rate
    return RtfReport(audio_s, wall, wall / audio_s, dict(session.stage_seconds), chunk_ms, session.use_ar)


@dataclass
class LatencyReport:
    """Impulse timing of a session fed one sample at a time."""

    impulse_at: int
    first_response: int  # first output index that differs from the impulse-free run
    response_emitted_after: int  # input samples consumed when that output was released
    max_emit_lag: int  # max over output samples of (input index at release - output index)

    @property
    def latency_samples(self) -> int:
        return max(self.max_emit_lag, self.response_emitted_after - 1 - self.impulse_at)


def impulse_latency(model: AVSkimModel, n_samples: int = 400, impulse_at: int = 203, use_ar: Optional[bool] = None) -> LatencyReport:
    """Push an impulse sample by sample and time when its effect is released."""
    c = model.config
    n_video = math.ceil(n_samples / c.samples_per_video_frame) + 1
    v = np.full((n_video, c.lip_hw, c.lip_hw), 0.5, F32)
    runs = []
    for amp in (0.0, 1.0):
        x = np.zeros(n_samples, F32)
        x[impulse_at] = amp
        session = StreamSession(model, use_ar=use_ar)
        released_at = []  # input index whose push released each output sample
        out = []
        for i in range(n_samples):
            lo, hi = -(-i // c.samples_per_video_frame), -(-(i + 1) // c.samples_per_video_frame)
            y = session.push(x[i : i + 1], v[lo:hi])
            out.append(y)
            released_at += [i] * len(y)
        runs.append((np.concatenate(out), released_at))
    (base, _), (resp, released) = runs
    n = min(len(base), len(resp))
    diff = np.flatnonzero(base[:n] != resp[:n])
    if len(diff) == 0:
        raise RuntimeError("the impulse produced no change in the released output")
    first = int(diff[0])
    max_lag = max(r - k for k, r in enumerate(released))
    return LatencyReport(impulse_at, first, released[first] + 1, max_lag)
