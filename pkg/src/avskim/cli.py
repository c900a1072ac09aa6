"""Command-line entry point: ``python -m avskim <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import fileio
from .config import ModelConfig, infer_use_acoustic, tiny_config
from .losses import evaluate, freq_term, loss_pass1, loss_pass2, paris_two_pass
from .model import AVSkimModel
from .profiler import profile
from .scenario import KINDS, ScenarioSpec, make_scenario
from .streaming import measure_rtf, open_session, stream_signal
from .weights import init_weights

PRESETS = {"default": ModelConfig, "tiny": tiny_config}


def load_config(value: Optional[str], use_acoustic: Optional[bool] = None) -> ModelConfig:
    """A preset name or a JSON file of ``ModelConfig`` fields."""
    if value is None or value in PRESETS:
        cfg = PRESETS[value or "default"]()
    else:
        cfg = ModelConfig.from_dict(fileio.load_json(value))
    if use_acoustic is not None and use_acoustic != cfg.use_acoustic_encoder:
        cfg = cfg.replace(use_acoustic_encoder=use_acoustic)
    return cfg


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(args.scenario, args.duration, args.snr, args.switch_time, args.seed)
    rec = make_scenario(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"mix": "mix.wav", "target": "target.wav", "interferer": "interferer.wav", "video": "video.avsev"}
    fileio.save_wav(out / files["mix"], rec.mix)
    fileio.save_wav(out / files["target"], rec.target)
    fileio.save_wav(out / files["interferer"], rec.interferer)
    fileio.save_features(out / files["video"], rec.target_video, spec.fps)
    manifest = dict(rec.metadata, achieved_snr_db=rec.achieved_snr_db(), files=files)
    fileio.save_json(out / "manifest.json", manifest)
    print(f"wrote {spec.kind} scenario ({spec.duration_s:g} s, {spec.snr_db:+.2f} dB) to {out}")
    return 0


def cmd_init_weights(args) -> int:
    cfg = load_config(args.config)
    weights = init_weights(cfg, args.seed)
    fileio.save_weights(args.out, weights)
    print(f"wrote {len(weights)} tensors ({weights.num_params():,} parameters) to {args.out}")
    return 0


def cmd_extract(args) -> int:
    weights = fileio.load_weights(args.weights)
    cfg = load_config(args.config, infer_use_acoustic(weights))
    x = fileio.load_wav(args.mix, cfg.sample_rate)
    v, fps = fileio.load_features(args.video)
    if fps != cfg.fps_fraction:
        raise ValueError(f"{args.video}: video is {fps} fps but the model expects {cfg.visual_fps}")
    use_ar = cfg.use_acoustic_encoder and not args.no_ar
    model = AVSkimModel(cfg, weights)
    model.check_durations(len(x), len(v))
    if args.streaming:
        chunk = max(1, int(round(args.chunk_ms * cfg.sample_rate / 1000)))
        y = stream_signal(open_session(cfg, weights, use_ar=use_ar), x, v, chunk)
    else:
        y = model.forward_offline(x, v, use_ar=use_ar)
    fileio.save_wav(args.out, y, cfg.sample_rate)
    print(f"wrote {len(y)} samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    est = fileio.load_wav(args.est)
    target = fileio.load_wav(args.target)
    mix = fileio.load_wav(args.mix)
    if not len(est) == len(target) == len(mix):
        raise ValueError(f"lengths differ: est {len(est)}, target {len(target)}, mix {len(mix)}")
    res = evaluate(mix, target, est, args.switch_time)
    print(res.to_text())
    payload = json.dumps(res.to_dict(), sort_keys=True)
    if args.json:
        Path(args.json).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    weights = fileio.load_weights(args.weights) if args.weights else None
    report = profile(cfg, weights)
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    weights = fileio.load_weights(args.weights) if args.weights else None
    use_ar = False if args.no_ar else None
    report = measure_rtf(cfg, args.duration, args.chunk_ms, args.seed, weights, use_ar)
    print(report.to_text())
    return 0


def cmd_paris_demo(args) -> int:
    cfg = load_config(args.config)
    if not cfg.use_acoustic_encoder:
        raise ValueError("paris-demo needs a config with the acoustic encoder")
    rec = make_scenario(ScenarioSpec("overlap", args.duration, 0.0, None, args.seed))
    model = AVSkimModel(cfg, init_weights(cfg, args.seed))
    res = paris_two_pass(model, rec.mix, rec.target_video, rec.target)
    print(f"L1 (pass 1)        {res.loss1:14.9f}")
    print(f"L2 (pass 2)        {res.loss2:14.9f}")
    # the identity compares both losses on the same (target, estimate) pair
    l1, l2 = loss_pass1(rec.target, res.est2), loss_pass2(rec.target, res.est2)
    half_freq = 0.5 * freq_term(rec.target, res.est2)
    ok = l2 - l1 == half_freq
    print(f"L2 - L1            {l2 - l1:14.9f}  (both on the pass-2 estimate)")
    print(f"0.5 * L_freq       {half_freq:14.9f}")
    print(f"identity           {'holds exactly' if ok else 'VIOLATED'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avskim", description="Streaming audio-visual target speaker extraction.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a seeded two-speaker scenario")
    s.add_argument("--scenario", choices=KINDS, required=True)
    s.add_argument("--snr", type=float, default=0.0)
    s.add_argument("--switch-time", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=4.0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("init-weights", help="write seeded random weights")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("extract", help="run the extractor on a mixture")
    s.add_argument("--mix", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--streaming", action="store_true")
    s.add_argument("--chunk-ms", type=float, default=10.0)
    s.add_argument("--no-ar", action="store_true", help="zero acoustic embeddings instead of self-feedback")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval", help="SI-SNRi / SNRi of an estimate")
    s.add_argument("--est", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mix", required=True)
    s.add_argument("--switch-time", type=float)
    s.add_argument("--json", help="write the JSON breakdown here instead of stdout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("profile", help="parameter and MACs/s report")
    s.add_argument("--config")
    s.add_argument("--weights")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("bench", help="streaming real-time factor")
    s.add_argument("--config")
    s.add_argument("--weights")
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--chunk-ms", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-ar", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("paris-demo", help="two-pass losses on a seeded scenario")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--duration", type=float, default=1.0)
    s.set_defaults(func=cmd_paris_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
