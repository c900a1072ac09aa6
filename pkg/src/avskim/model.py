"""The causal audio-visual extraction network.

Data flow per audio frame ``t`` (8 samples at 16 kHz)::

    x --encoder--> E(t) ----------------------------+-- * mask --decoder--> s_hat
    v --visual--> V(t // repeat) --+                 |
    s_hat[< frame t] --acoustic--> A(t) --+--> SkiM --+

``E``, ``V`` and ``A`` are concatenated, projected to the SkiM width and run
through segment LSTMs whose boundary states are carried between segments by
memory LSTMs. Every stage is causal, so the same network runs offline (this
module) or frame by frame (:mod:`avskim.streaming`).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn_core as nn
from .config import ModelConfig, layer_index
from .nn_core import F32, LstmState, ShapeError
from .weights import WeightStore

# A(t) is built from acoustic frame t - FEEDBACK_DELAY, the newest frame whose
# samples are all final once frame t - 1 has been decoded.
FEEDBACK_DELAY = 2


@dataclass
class EmbeddingSeq:
    frames: np.ndarray  # [T, C]
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, F32)
        if self.frames.ndim != 2:
            raise ShapeError("embedding sequence must be [T, C]")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]


def repeat_upsample(e: EmbeddingSeq, target_rate: float, n_frames: Optional[int] = None) -> EmbeddingSeq:
    """Repeat each frame ``target_rate / e.frame_rate`` times.

    With ``n_frames`` the result is truncated, or extended by holding the last
    frame, to exactly that length.
    """
    ratio = float(target_rate) / float(e.frame_rate)
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(f"rate ratio {target_rate}/{e.frame_rate} is not integral")
    out = np.repeat(e.frames, factor, axis=0)
    if n_frames is not None:
        if len(out) == 0:
            raise ValueError("cannot extend an empty embedding sequence")
        if len(out) >= n_frames:
            out = out[:n_frames]
        else:
            out = np.concatenate([out, np.repeat(out[-1:], n_frames - len(out), axis=0)])
    return EmbeddingSeq(out, target_rate)


@dataclass
class AcousticState:
    encoder_buf: np.ndarray
    conv_bufs: list
    lstm: LstmState
    delay: deque = field(default_factory=deque)


@dataclass
class SkimState:
    """Recurrent state of the extractor between calls.

    ``pending[b]`` queues initial states for block ``b``'s upcoming segments,
    produced by memory LSTM ``b - 1`` at the end of the previous segment.
    """

    frames_done: int
    blocks: list
    mem: list
    pending: list


class AVSkimModel:
    """Holds validated weights and evaluates the network's stages."""

    def __init__(self, config: ModelConfig, weights: WeightStore):
        weights.audit(config)
        self.config = config
        self.weights = weights
        self.layers = layer_index(config)
        w = weights
        c = config
        self.enc_w = w["encoder.conv.weight"].reshape(c.enc_channels, c.enc_kernel)
        self.enc_b = w["encoder.conv.bias"]
        self.dec_w = w["decoder.linear.weight"]
        self.dec_b = w["decoder.linear.bias"]
        self.in_w = w["extractor.input.weight"]
        self.in_b = w["extractor.input.bias"]
        self.out_w = w["extractor.output.weight"]
        self.out_b = w["extractor.output.bias"]
        self.blocks = [self._lstm(f"extractor.block{b}.lstm") for b in range(c.skim_layers)]
        self.mems = [
            (self._lstm(f"extractor.mem{b}.h_lstm"), self._lstm(f"extractor.mem{b}.c_lstm"))
            for b in range(c.skim_layers - 1)
        ]
        self.visual_blocks = [
            (self.layers[f"visual.block{i}.dw"].spec, self.layers[f"visual.block{i}.pw"].spec, i)
            for i in range(1, len(c.visual_strides) + 1)
        ]
        if c.use_acoustic_encoder:
            self.ac_enc_w = w["acoustic.encoder.weight"].reshape(c.enc_channels, c.enc_kernel)
            self.ac_convs = []
            for i in range(1, len(c.acoustic_channels) + 1):
                spec = self.layers[f"acoustic.conv{i}"].spec
                wt = w[f"acoustic.conv{i}.weight"]
                self.ac_convs.append((spec, wt, wt.reshape(spec.out_channels, -1)))
            self.ac_lstm = self._lstm("acoustic.lstm")
            self.fus_w = w["acoustic.fusion.weight"]

    def _lstm(self, path):
        w = self.weights
        return (w[f"{path}.weight_ih"], w[f"{path}.weight_hh"], w.get(f"{path}.bias"))

    # -- speech encoder / decoder -------------------------------------------

    def speech_encode(self, x: np.ndarray) -> EmbeddingSeq:
        """Causal Conv1D + ReLU; one 128-d frame per ``enc_stride`` samples."""
        c = self.config
        x = np.asarray(x, F32)
        if x.ndim != 1 or len(x) < c.enc_stride:
            raise ShapeError(f"need a mono signal of at least {c.enc_stride} samples")
        spec = self.layers["encoder.conv"].spec
        e = nn.conv1d(x[None, :], spec, self.weights["encoder.conv.weight"], self.enc_b)
        return EmbeddingSeq(e.T, c.frame_rate)

    def speech_decode(self, e: EmbeddingSeq, n_samples: Optional[int] = None) -> np.ndarray:
        """Linear layer then overlap-add; the leading pad region is dropped.

        ``F`` frames give ``8 * F`` samples. With ``n_samples`` the signal is
        zero-extended (or cut) to that length.
        """
        c = self.config
        if len(e) == 0:
            raise ShapeError("cannot decode zero frames")
        if e.channels != c.enc_channels:
            raise ShapeError(f"decoder expects {c.enc_channels} channels, got {e.channels}")
        frames = nn.linear(e.frames, self.dec_w, self.dec_b)
        y = nn.overlap_add(frames, c.enc_stride)[c.enc_kernel - c.enc_stride :]
        if n_samples is not None:
            y = y[:n_samples] if len(y) >= n_samples else np.concatenate([y, np.zeros(n_samples - len(y), F32)])
        return y

    # -- visual encoder ------------------------------------------------------

    def visual_history(self) -> np.ndarray:
        c = self.config
        return np.zeros((1, c.visual_temporal_kernel - 1, c.lip_hw, c.lip_hw), F32)

    def visual_frame(self, frame: np.ndarray, history: np.ndarray):
        """Embed one lip frame given the previous raw frames; returns ``(emb, history')``."""
        c = self.config
        frame = np.asarray(frame, F32)
        if frame.shape != (c.lip_hw, c.lip_hw):
            raise ShapeError(f"lip frames must be {c.lip_hw}x{c.lip_hw}, got {frame.shape}")
        w = self.weights
        x = frame[None, None]
        y = nn.conv3d_causal(x, self.layers["visual.front"].spec, w["visual.front.weight"], w["visual.front.bias"], history)[:, 0]
        for dw, pw, i in self.visual_blocks:
            y = nn.depthwise_separable_conv2d(
                y, dw, pw,
                w[f"visual.block{i}.dw.weight"], w[f"visual.block{i}.dw.bias"],
                w[f"visual.block{i}.pw.weight"], w[f"visual.block{i}.pw.bias"],
            )
        emb = y.mean(axis=(1, 2), dtype=F32)
        history = np.concatenate([history[:, 1:], x], axis=1)
        return emb, history

    def visual_encode(self, v: np.ndarray) -> EmbeddingSeq:
        """One embedding per video frame; frame ``t`` sees frames ``<= t`` only."""
        v = np.asarray(v, F32)
        if v.ndim != 3:
            raise ShapeError("video must be [T, H, W]")
        hist = self.visual_history()
        out = np.empty((len(v), self.config.visual_dim), F32)
        for t in range(len(v)):
            out[t], hist = self.visual_frame(v[t], hist)
        return EmbeddingSeq(out, float(self.config.visual_fps))

    # -- autoregressive acoustic encoder ------------------------------------

    def acoustic_state(self) -> AcousticState:
        c = self.config
        d = AcousticState(
            encoder_buf=np.zeros(c.enc_kernel - c.enc_stride, F32),
            conv_bufs=[np.zeros((spec.in_channels, spec.left_pad), F32) for spec, _, _ in self.ac_convs],
            lstm=LstmState.zeros(c.acoustic_dim),
        )
        for _ in range(FEEDBACK_DELAY):
            d.delay.append(np.zeros(c.acoustic_dim, F32))
        return d

    def acoustic_encode(self, past: np.ndarray, state: Optional[AcousticState] = None):
        """Encode extracted speech into frame-aligned embeddings ``A(t)``.

        ``past`` continues the extracted signal from where ``state`` left off.
        Each complete encoder frame ``j`` yields one output, which is released
        as ``A(j + 2)``; the first two outputs of a stream are zero vectors.
        """
        c = self.config
        if not c.use_acoustic_encoder:
            raise ValueError("model has no acoustic encoder")
        if state is None:
            state = self.acoustic_state()
        buf = np.concatenate([state.encoder_buf, np.asarray(past, F32)])
        n = 0 if len(buf) < c.enc_kernel else (len(buf) - c.enc_kernel) // c.enc_stride + 1
        frames = nn.frame_signal(buf[: (n - 1) * c.enc_stride + c.enc_kernel], c.enc_kernel, c.enc_stride) if n else None
        state.encoder_buf = buf[n * c.enc_stride :]
        if not n:
            return EmbeddingSeq(np.zeros((0, c.acoustic_dim), F32), c.frame_rate), state
        h = np.maximum(frames @ self.ac_enc_w.T, 0)  # [n, C]
        for k, (spec, wt, _) in enumerate(self.ac_convs):
            x = h.T
            hist = state.conv_bufs[k]
            full = np.concatenate([hist, x], axis=1)
            state.conv_bufs[k] = full[:, full.shape[1] - spec.left_pad :]
            h = nn.conv1d(x, spec, wt, None, history=hist).T
        w_ih, w_hh, _ = self.ac_lstm
        a, state.lstm = nn.lstm_sequence(h, state.lstm, self.layers["acoustic.lstm"].spec, w_ih, w_hh)
        out = np.empty_like(a)
        for j in range(n):
            state.delay.append(a[j])
            out[j] = state.delay.popleft()
        return EmbeddingSeq(out, c.frame_rate), state

    # -- SkiM extractor -----------------------------------------------------

    def skim_state(self) -> SkimState:
        h = self.config.skim_hidden
        return SkimState(
            frames_done=0,
            blocks=[LstmState.zeros(h) for _ in self.blocks],
            mem=[(LstmState.zeros(h), LstmState.zeros(h)) for _ in self.mems],
            pending=[deque() for _ in self.blocks],
        )

    def mem_update(self, b: int, boundary: LstmState, mem_state) -> tuple:
        """Memory LSTM ``b``: transform a segment's final (h, c) into the next
        segment's initial state for block ``b + 1`` (residual form)."""
        (hi, hh, hb), (ci, ch, cb) = self.mems[b]
        sh, sc = mem_state
        gx = hi @ boundary.h
        gx += hb
        h1, c1 = nn.lstm_cell(gx, sh.h, sh.c, hh)
        gx = ci @ boundary.c
        gx += cb
        h2, c2 = nn.lstm_cell(gx, sc.h, sc.c, ch)
        init = LstmState(boundary.h + h1, boundary.c + h2)
        return init, (LstmState(h1, c1), LstmState(h2, c2))

    def skim_extract(self, fused: EmbeddingSeq, state: Optional[SkimState] = None):
        """Mask estimation over ``fused[T, enc + visual (+ acoustic)]``.

        Block-major evaluation: each block runs over the whole chunk before
        the next; segment boundaries feed the memory LSTMs.
        """
        c = self.config
        x = fused.frames
        av = c.enc_channels + c.visual_dim
        if x.shape[1] not in (av, c.fused_dim):
            raise ShapeError(f"fused embeddings must have {c.fused_dim} channels, got {x.shape[1]}")
        if state is None:
            state = self.skim_state()
        z = nn.linear(x[:, :av], self.in_w, self.in_b)
        if x.shape[1] > av:
            if not c.use_acoustic_encoder:
                raise ShapeError("acoustic channels given to a model without an acoustic encoder")
            z += x[:, av:] @ self.fus_w.T
        t0, seg = state.frames_done, c.skim_segment
        n = len(z)
        for b, (w_ih, w_hh, bias) in enumerate(self.blocks):
            gx = z @ w_ih.T
            gx += bias
            hs = np.empty_like(z)
            st = state.blocks[b]
            h, cc = st.h, st.c
            for i in range(n):
                t = t0 + i
                if t % seg == 0:
                    if b == 0 or t == 0:
                        h, cc = np.zeros_like(h), np.zeros_like(cc)
                    else:
                        init = state.pending[b].popleft()
                        h, cc = init.h, init.c
                h, cc = nn.lstm_cell(gx[i], h, cc, w_hh)
                hs[i] = h
                if (t + 1) % seg == 0 and b < len(self.mems):
                    init, state.mem[b] = self.mem_update(b, LstmState(h, cc), state.mem[b])
                    state.pending[b + 1].append(init)
            state.blocks[b] = LstmState(h, cc)
            z = z + hs
        mask = nn.linear(z, self.out_w, self.out_b)
        np.maximum(mask, 0, out=mask)
        if c.clamp_mask:
            np.minimum(mask, 1, out=mask)
        state.frames_done += n
        return EmbeddingSeq(mask, c.frame_rate), state

    # -- end to end ---------------------------------------------------------

    def check_durations(self, n_samples: int, n_video: int) -> None:
        expected = n_samples / self.config.samples_per_video_frame
        if abs(n_video - expected) > 1:
            raise ValueError(
                f"audio of {n_samples} samples needs about {expected:.2f} video frames, got {n_video}"
            )

    def forward_offline(
        self,
        x: np.ndarray,
        v: np.ndarray,
        use_ar: Optional[bool] = None,
        feedback: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Extract the target speech from mixture ``x`` given lip frames ``v``.

        ``use_ar`` defaults to whether the model has an acoustic encoder. When
        it is off, ``A(t)`` is the zero placeholder. When it is on, ``feedback``
        (e.g. a first-pass estimate) drives the acoustic encoder; without it the
        model feeds back its own output frame by frame.
        """
        c = self.config
        x = np.asarray(x, F32)
        v = np.asarray(v, F32)
        if use_ar is None:
            use_ar = c.use_acoustic_encoder
        if use_ar and not c.use_acoustic_encoder:
            raise ValueError("use_ar requested but the model has no acoustic encoder")
        self.check_durations(len(x), len(v))
        if use_ar and feedback is None:
            from .streaming import StreamSession

            session = StreamSession(self, use_ar=True)
            head = session.push(x, v)
            return np.concatenate([head, session.close()])
        e = self.speech_encode(x)
        vis = repeat_upsample(self.visual_encode(v), c.frame_rate, len(e))
        parts = [e.frames, vis.frames]
        if use_ar:
            feedback = np.asarray(feedback, F32)
            if feedback.shape != x.shape:
                raise ShapeError("feedback must have the same length as the mixture")
            a, _ = self.acoustic_encode(feedback)
            parts.append(a.frames)
        mask, _ = self.skim_extract(EmbeddingSeq(np.concatenate(parts, axis=1), c.frame_rate))
        masked = EmbeddingSeq(mask.frames * e.frames, c.frame_rate)
        return self.speech_decode(masked, len(x))
