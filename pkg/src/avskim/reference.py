"""Slow pure-Python reference evaluation with per-layer multiply counters.

Every scalar weight multiply, including multiplies against zero padding, goes
through :meth:`MacCounter.dot`, which counts them one by one. The vectorised
model never touches this module; it exists to cross-check both the numerics
of :mod:`avskim.model` and the analytic costs of :mod:`avskim.profiler`.
Only small configurations are practical.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Optional

import numpy as np

from .config import ModelConfig, layer_index
from .model import FEEDBACK_DELAY
from .weights import WeightStore


class MacCounter:
    def __init__(self):
        self.counts = defaultdict(int)

    def dot(self, path: str, ws, xs) -> float:
        acc = 0.0
        n = 0
        for w, x in zip(ws, xs):
            acc += w * x
            n += 1
        self.counts[path] += n
        return acc

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _relu(v):
    return [x if x > 0 else 0.0 for x in v]


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _tolist(a) -> list:
    return np.asarray(a, np.float64).tolist()


# -- layer kernels ------------------------------------------------------------


def conv1d_ref(ctr, path, x, weight, bias, stride, left_pad, groups=1, relu=False):
    """``x`` is ``[Cin][T]``; returns ``[Cout][T']``."""
    cin = len(x)
    cout, cin_g, k = len(weight), len(weight[0]), len(weight[0][0])
    xp = [[0.0] * left_pad + list(row) for row in x]
    n_out = (len(xp[0]) - k) // stride + 1
    cout_g = cout // groups
    out = []
    for o in range(cout):
        g = o // cout_g
        row = []
        for t in range(n_out):
            acc = bias[o] if bias is not None else 0.0
            for i in range(cin_g):
                acc += ctr.dot(path, weight[o][i], xp[g * cin_g + i][t * stride : t * stride + k])
            row.append(acc)
        out.append(_relu(row) if relu else row)
    assert cin == cin_g * groups
    return out


def linear_ref(ctr, path, x, weight, bias=None):
    return [ctr.dot(path, w, x) + (bias[o] if bias is not None else 0.0) for o, w in enumerate(weight)]


def _pad2d(img, p):
    w = len(img[0]) + 2 * p
    return [[0.0] * w for _ in range(p)] + [[0.0] * p + list(r) + [0.0] * p for r in img] + [[0.0] * w for _ in range(p)]


def conv2d_ref(ctr, path, x, weight, bias, stride=1, groups=1, relu=False):
    """``x`` is ``[C][H][W]`` with symmetric ``k // 2`` zero padding."""
    cout, cin_g, k = len(weight), len(weight[0]), len(weight[0][0])
    p = k // 2
    xp = [_pad2d(ch, p) for ch in x]
    oh = (len(xp[0]) - k) // stride + 1
    ow = (len(xp[0][0]) - k) // stride + 1
    cout_g = cout // groups
    out = []
    for o in range(cout):
        g = o // cout_g
        plane = []
        for r in range(oh):
            row = []
            for col in range(ow):
                acc = bias[o] if bias is not None else 0.0
                for i in range(cin_g):
                    src = xp[g * cin_g + i]
                    for dr in range(k):
                        line = src[r * stride + dr][col * stride : col * stride + k]
                        acc += ctr.dot(path, weight[o][i][dr], line)
                row.append(max(acc, 0.0) if relu else acc)
            plane.append(row)
        out.append(plane)
    return out


def conv3d_frame_ref(ctr, path, frames, weight, bias, stride=1, relu=False):
    """One output frame from the last ``kt`` input frames ``[kt][C][H][W]``."""
    cout, cin, kt, k = len(weight), len(weight[0]), len(weight[0][0]), len(weight[0][0][0])
    p = k // 2
    padded = [[_pad2d(ch, p) for ch in fr] for fr in frames]
    oh = (len(padded[0][0]) - k) // stride + 1
    ow = (len(padded[0][0][0]) - k) // stride + 1
    out = []
    for o in range(cout):
        plane = []
        for r in range(oh):
            row = []
            for col in range(ow):
                acc = bias[o] if bias is not None else 0.0
                for i in range(cin):
                    for dt in range(kt):
                        src = padded[dt][i]
                        for dr in range(k):
                            line = src[r * stride + dr][col * stride : col * stride + k]
                            acc += ctr.dot(path, weight[o][i][dt][dr], line)
                row.append(max(acc, 0.0) if relu else acc)
            plane.append(row)
        out.append(plane)
    return out


def lstm_ref(ctr, path, x, h, c, w_ih, w_hh, bias=None):
    n = len(h)
    gates = [
        ctr.dot(path, w_ih[j], x) + ctr.dot(path, w_hh[j], h) + (bias[j] if bias is not None else 0.0)
        for j in range(4 * n)
    ]
    i_g = [_sigmoid(g) for g in gates[:n]]
    f_g = [_sigmoid(g) for g in gates[n : 2 * n]]
    g_g = [math.tanh(g) for g in gates[2 * n : 3 * n]]
    o_g = [_sigmoid(g) for g in gates[3 * n :]]
    c2 = [f_g[j] * c[j] + i_g[j] * g_g[j] for j in range(n)]
    h2 = [o_g[j] * math.tanh(c2[j]) for j in range(n)]
    return h2, c2


# -- whole model ----------------------------------------------------------------


def reference_forward(
    config: ModelConfig,
    weights: WeightStore,
    x,
    v,
    feedback: Optional[np.ndarray] = None,
    counter: Optional[MacCounter] = None,
):
    """Evaluate the network in float64 pure Python; returns ``(output, counter)``.

    With the acoustic encoder enabled, ``feedback`` drives it (zeros when
    omitted), matching ``forward_offline(..., use_ar=True, feedback=...)``.
    """
    c = config
    ctr = counter if counter is not None else MacCounter()
    layers = layer_index(c)
    W = {k: _tolist(a) for k, a in weights.items()}
    n = len(x)
    s, k = c.enc_stride, c.enc_kernel

    enc = conv1d_ref(ctr, "encoder.conv", [_tolist(x)], W["encoder.conv.weight"], W["encoder.conv.bias"], s, k - s, relu=True)
    n_frames = len(enc[0])
    e = [[enc[ch][t] for ch in range(c.enc_channels)] for t in range(n_frames)]

    # visual stream, one embedding per video frame
    kt = c.visual_temporal_kernel
    zero = [[0.0] * c.lip_hw for _ in range(c.lip_hw)]
    hist = [[zero] for _ in range(kt - 1)]
    vis = []
    for frame in _tolist(v):
        hist.append([frame])
        y = conv3d_frame_ref(ctr, "visual.front", hist[-kt:], W["visual.front.weight"], W["visual.front.bias"], relu=True)
        for i, stride in enumerate(c.visual_strides, start=1):
            dw, pw = f"visual.block{i}.dw", f"visual.block{i}.pw"
            y = conv2d_ref(ctr, dw, y, W[f"{dw}.weight"], W[f"{dw}.bias"], stride, groups=len(y))
            y = conv2d_ref(ctr, pw, y, W[f"{pw}.weight"], W[f"{pw}.bias"], relu=True)
        vis.append([sum(sum(r) for r in plane) / (len(plane) * len(plane[0])) for plane in y])

    acoustic = None
    if c.use_acoustic_encoder:
        fb = _tolist(feedback) if feedback is not None else [0.0] * n
        a = conv1d_ref(ctr, "acoustic.encoder", [fb], W["acoustic.encoder.weight"], None, s, k - s, relu=True)
        for i in range(1, len(c.acoustic_channels) + 1):
            spec = layers[f"acoustic.conv{i}"].spec
            a = conv1d_ref(ctr, f"acoustic.conv{i}", a, W[f"acoustic.conv{i}.weight"], None, 1, spec.left_pad, relu=True)
        h, cc = [0.0] * c.acoustic_dim, [0.0] * c.acoustic_dim
        acoustic = []
        for t in range(n_frames):
            h, cc = lstm_ref(ctr, "acoustic.lstm", [row[t] for row in a], h, cc, W["acoustic.lstm.weight_ih"], W["acoustic.lstm.weight_hh"])
            acoustic.append(h)
        acoustic = [[0.0] * c.acoustic_dim] * FEEDBACK_DELAY + acoustic[: n_frames - FEEDBACK_DELAY]

    z = []
    for t in range(n_frames):
        vt = vis[min(t // c.repeat_factor, len(vis) - 1)]
        zt = linear_ref(ctr, "extractor.input", e[t] + vt, W["extractor.input.weight"], W["extractor.input.bias"])
        if acoustic is not None:
            fused = linear_ref(ctr, "acoustic.fusion", acoustic[t], W["acoustic.fusion.weight"])
            zt = [p + q for p, q in zip(zt, fused)]
        z.append(zt)

    seg, hid = c.skim_segment, c.skim_hidden
    pending = [[] for _ in range(c.skim_layers)]
    mem = [([0.0] * hid, [0.0] * hid, [0.0] * hid, [0.0] * hid) for _ in range(c.skim_layers - 1)]
    for b in range(c.skim_layers):
        p = f"extractor.block{b}.lstm"
        h, cc = [0.0] * hid, [0.0] * hid
        for t in range(n_frames):
            if t % seg == 0:
                h, cc = pending[b].pop(0) if (b and t) else ([0.0] * hid, [0.0] * hid)
            h, cc = lstm_ref(ctr, p, z[t], h, cc, W[f"{p}.weight_ih"], W[f"{p}.weight_hh"], W[f"{p}.bias"])
            if (t + 1) % seg == 0 and b < c.skim_layers - 1:
                m, q = f"extractor.mem{b}.h_lstm", f"extractor.mem{b}.c_lstm"
                mh, mc, nh, nc = mem[b]
                mh, mc = lstm_ref(ctr, m, h, mh, mc, W[f"{m}.weight_ih"], W[f"{m}.weight_hh"], W[f"{m}.bias"])
                nh, nc = lstm_ref(ctr, q, cc, nh, nc, W[f"{q}.weight_ih"], W[f"{q}.weight_hh"], W[f"{q}.bias"])
                mem[b] = (mh, mc, nh, nc)
                pending[b + 1].append(([u + w for u, w in zip(h, mh)], [u + w for u, w in zip(cc, nh)]))
            z[t] = [u + w for u, w in zip(z[t], h)]

    out = [0.0] * ((n_frames + 1) * s)
    for t in range(n_frames):
        mask = _relu(linear_ref(ctr, "extractor.output", z[t], W["extractor.output.weight"], W["extractor.output.bias"]))
        if c.clamp_mask:
            mask = [min(m, 1.0) for m in mask]
        frame = linear_ref(ctr, "decoder.linear", [m * q for m, q in zip(mask, e[t])], W["decoder.linear.weight"], W["decoder.linear.bias"])
        for j, val in enumerate(frame):
            out[t * s + j] += val
    y = out[k - s :][:n]
    y += [0.0] * (n - len(y))
    return np.asarray(y), ctr


def count_oracle(config: ModelConfig, weights: WeightStore, seed: int = 0) -> MacCounter:
    """Count the multiplies of a reference run over exactly one second of input."""
    rng = np.random.default_rng(seed)
    n = config.sample_rate
    x = rng.uniform(-0.5, 0.5, n)
    n_video = n // config.samples_per_video_frame
    v = rng.uniform(0.0, 1.0, (n_video, config.lip_hw, config.lip_hw))
    feedback = rng.uniform(-0.5, 0.5, n) if config.use_acoustic_encoder else None
    _, ctr = reference_forward(config, weights, x, v, feedback)
    return ctr
