"""Command-line entry point: ``panoscan <command> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..context.checkpoint import CheckpointError, load_model, save_model
from ..context.providers import get_provider
from ..context.train import TrainingError, WindowData, evaluate_bits, scanpath_windows, train
from ..entropy import QuantizerSpec
from ..geometry import SphericalPoint, ViewportSpec, extract_viewport
from ..metrics import Scanpath, max_tc, min_od, sliced_metrics
from ..sampler import MODES, generate_scanpath
from .config import RunConfig
from .io import FormatError, load_frames, load_manifest, load_scanpaths, save_scanpaths, write_pnm
from .synth import SyntheticSpec, synthesize

log = logging.getLogger("panoscan")


class CliError(Exception):
    pass


def _entries(manifest, split=None):
    entries = load_manifest(manifest)
    if split is not None:
        entries = [e for e in entries if e.split == split]
        if not entries:
            raise CliError(f"manifest {manifest} has no '{split}' entries")
    return entries


def _windows(entries, cfg: RunConfig, model_cfg=None) -> WindowData:
    spec = cfg.viewport()
    provider = get_provider(cfg["provider"])
    R = cfg._num("history.R", int)
    S = cfg._num("horizon.S", int)
    stride = cfg._num("train.stride", int)
    parts = []
    for e in entries:
        frames = load_frames(e.frames) if e.frames is not None else None
        for s in load_scanpaths(e.scanpaths, rate=e.sample_rate):
            fi = (lambda k, s=s, e=e: e.frame_index(s.start + k))
            parts.append(scanpath_windows(s.points, R, S, spec, provider, frames, fi, stride))
    data = WindowData.concat(parts) if parts else None
    if data is None or len(data) == 0:
        raise CliError(f"no training windows: scanpaths need at least {2 * R + 1 + S} viewpoints")
    return data


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    data = _windows(_entries(args.manifest, "train"), cfg)
    provider = get_provider(cfg["provider"])
    model_cfg = cfg.model_config(provider.channels, provider.grid)
    print(f"training on {len(data)} windows")

    def report(epoch, bits):
        print(f"epoch {epoch + 1}: {bits:.4f} bits/viewpoint", flush=True)

    result = train(data, model_cfg, cfg.quantizer(), cfg.train_config(), on_epoch=report)
    extra = {k: v for k, v in cfg.values.items() if not k.startswith("model.")}
    save_model(args.out, result.model, extra)
    print(f"wrote {args.out}")
    return 0


def _run_config_from_meta(meta: dict) -> RunConfig:
    return RunConfig.from_mapping({k: v for k, v in meta.items() if k in RunConfig().values})


def cmd_codelength(args) -> int:
    model, meta = load_model(args.ckpt)
    cfg = _run_config_from_meta(meta)
    split = "test" if any(e.split == "test" for e in load_manifest(args.manifest)) else None
    data = _windows(_entries(args.manifest, split), cfg)
    bits = evaluate_bits(model, data, cfg.quantizer())
    print(f"bits_per_viewpoint={bits:.6f}")
    return 0


def cmd_sample(args) -> int:
    model, meta = load_model(args.ckpt)
    cfg = _run_config_from_meta(meta)
    spec = cfg.viewport()
    entries = [e for e in load_manifest(args.manifest) if e.video_id == args.video]
    if not entries:
        raise CliError(f"video {args.video!r} is not in {args.manifest}")
    path = None
    for e in entries:
        for s in load_scanpaths(e.scanpaths, rate=e.sample_rate):
            if s.video_id == args.video and s.user_id == args.user:
                path, entry = s, e
                break
        if path is not None:
            break
    if path is None:
        raise CliError(f"no scanpath for video {args.video!r}, user {args.user!r}")
    R = model.cfg.R
    n_hist = args.history or 2 * R + 1
    if len(path) < n_hist:
        raise CliError(f"user {args.user} has {len(path)} viewpoints; history needs {n_hist}")
    frames = load_frames(entry.frames) if entry.frames is not None else None
    scfg = cfg.sampler_config(rounds=args.rounds, seed=args.seed, mode=args.mode,
                              beam_width=args.beam_width, rate=entry.sample_rate)
    gen = generate_scanpath(model, path.points[:n_hist], scfg, spec, np.random.default_rng(args.seed),
                            frames=frames, provider=get_provider(cfg["provider"]),
                            frame_index=lambda k: entry.frame_index(path.start + k))
    if gen.clamped.any():
        log.warning("%d generated viewpoints were clamped to the viewport border", int(gen.clamped.sum()))
    out = Scanpath(args.video, args.user, gen.points, path.start + n_hist, entry.sample_rate)
    save_scanpaths(args.out, [out], degrees=args.degrees)
    print(f"wrote {len(out)} viewpoints to {args.out}")
    return 0


def _aligned(truth: list[Scanpath], pred: list[Scanpath]):
    start = max(s.start for s in truth + pred)
    stop = min(s.start + len(s) for s in truth + pred)
    if stop - start < 2:
        raise CliError("predicted and ground-truth scanpaths share fewer than two time steps")
    return ([s.slice(start - s.start, stop - s.start) for s in truth],
            [s.slice(start - s.start, stop - s.start) for s in pred])


def cmd_eval(args) -> int:
    truth = load_scanpaths(args.truth, degrees=args.degrees)
    pred = load_scanpaths(args.pred, degrees=args.degrees)
    videos = sorted({s.video_id for s in pred})
    rows = []
    for v in videos:
        t = [s for s in truth if s.video_id == v]
        p = [s for s in pred if s.video_id == v]
        if not t:
            raise CliError(f"no ground truth for video {v!r}")
        t, p = _aligned(t, p)
        row = {"minOD": min_od(t, p), "maxTC": max_tc(t, p)}
        for ts in args.slice or []:
            if ts > len(t[0]):
                raise CliError(f"slice length {ts} exceeds the {len(t[0])} aligned steps")
            row[f"SminOD-{ts}"], row[f"SmaxTC-{ts}"] = sliced_metrics(t, p, ts)
        rows.append((v, row))
    keys = list(rows[0][1])
    if len(rows) > 1:
        rows.append(("mean", {k: float(np.mean([r[k] for _, r in rows])) for k in keys}))
    width = max(len(v) for v, _ in rows)
    print("video".ljust(width) + "".join(f"{k:>12}" for k in keys))
    for v, r in rows:
        print(v.ljust(width) + "".join(f"{r[k]:>12.6f}" for k in keys))
    if args.kv:
        for v, r in rows:
            for k in keys:
                print(f"{v}.{k}={r[k]!r}")
    return 0


def cmd_project(args) -> int:
    spec = ViewportSpec.parse(args.spec)
    frames = load_frames(args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for s in load_scanpaths(args.scanpath, degrees=args.degrees):
        for k, (phi, theta) in enumerate(s.points):
            t = s.start + k
            fi = int(round(t * args.frame_rate / args.sample_rate))
            if not 0 <= fi < len(frames):
                raise CliError(f"no frame {fi} for {s.video_id}/{s.user_id} t_index {t}")
            raster = extract_viewport(frames[fi], SphericalPoint(phi, theta), spec)
            ext = "pgm" if raster.shape[2] == 1 else "ppm"
            write_pnm(out / f"{s.video_id}_{s.user_id}_{t:06d}.{ext}", raster)
            n += 1
    print(f"wrote {n} viewports to {out}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
    data = synthesize(spec)
    save_scanpaths(args.out, data.scanpaths)
    print(f"wrote {len(data.scanpaths)} scanpaths to {args.out}")
    print(f"entropy_bits={data.entropy_bits!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panoscan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train a model by code-length minimization")
    f.add_argument("--manifest", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", help="generate a scanpath continuing a user's history")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--user", required=True)
    s.add_argument("--rounds", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=MODES, default="pid")
    s.add_argument("--beam-width", type=int, default=None)
    s.add_argument("--history", type=int, default=None, help="number of leading viewpoints used as history")
    s.add_argument("--degrees", action="store_true", help="write angles in degrees")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare predicted and ground-truth scanpath sets")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--slice", type=int, action="append")
    e.add_argument("--kv", action="store_true", help="also print key=value lines")
    e.add_argument("--degrees", action="store_true", help="CSV angles are degrees")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("codelength", help="held-out bits per viewpoint")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--manifest", required=True)
    c.set_defaults(func=cmd_codelength)

    j = sub.add_parser("project", help="extract viewports along scanpaths")
    j.add_argument("--frames", required=True)
    j.add_argument("--scanpath", required=True)
    j.add_argument("--spec", default="252x484@63x112")
    j.add_argument("--frame-rate", type=float, default=5.0)
    j.add_argument("--sample-rate", type=float, default=5.0)
    j.add_argument("--degrees", action="store_true", help="CSV angles are degrees")
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_project)

    y = sub.add_parser("synth", help="write synthetic scanpaths from a known generator")
    y.add_argument("--spec")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, FormatError, CheckpointError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
