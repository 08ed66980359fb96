"""Command-line driver: gen | saliency | segment | eval | bench.

Exit status: 0 success, 1 bad arguments, 2 I/O failure, 3 empty input.
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import ENV_VAR, get_workers, set_workers
from .attention import DegenerateSaliencyError, compute_efdm, kalman_update_saliency
from .config import ConfigError, SegConfig, load_config
from .evaluation import score
from .imageio import (FRAME_PATTERN, UnsupportedImageError, frame_paths, load_frame,
                      load_mask, save_gray, save_mask, save_rgb)
from .maxflow import FlowGraph
from .mrf import energy_to_graph
from .pipeline import STAGES, STRATEGIES, Segmenter, normalize_strategy
from .prior import load_seeds
from .saliency import compute_saliency
from .synthetic import ClipSpec, make_clip, write_clip

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_EMPTY = 0, 1, 2, 3
RESOLUTIONS = ((352, 288), (480, 384), (640, 512))


class UsageError(Exception):
    pass


class EmptyInputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers

def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("segmentation settings (override --config)")
    for f in fields(SegConfig):
        key = "lambda" if f.name == "lam" else f.name
        kind = {"int": int, "float": float}.get(f.type, str)
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind,
                       default=None, metavar=kind.__name__.upper())


def _resolve_config(args) -> SegConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SegConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}", None) for f in fields(SegConfig)}
    return cfg.with_overrides(**overrides)


def _apply_threads(args) -> int:
    n = getattr(args, "threads", None)
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be >= 1")
        set_workers(n)
    return get_workers()


def _load_clip(directory):
    paths = frame_paths(directory)
    if not paths:
        raise EmptyInputError(f"{directory}: no frame_NNNNNN.png files")
    frames = []
    for p in paths:
        f = load_frame(p)
        if f.ndim == 2:
            f = np.repeat(f[..., None], 3, axis=2)
        frames.append(f)
    return paths, frames


def _versions() -> dict:
    import numba
    import PIL
    import scipy
    return {"salientcut": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "Pillow": PIL.__version__}


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _overlay(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = frame.copy()
    out[mask] = 0.5 * out[mask] + 0.5 * np.array([1.0, 0.0, 0.0])
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    spec = ClipSpec(width=args.width, height=args.height, frames=args.frames,
                    radius=args.radius if args.radius else 26.0 * args.height / 288.0,
                    speed=args.speed, noise=args.noise, disk_contrast=args.disk_contrast,
                    sign_contrast=args.sign_contrast, occlusion_start=args.occlusion_start,
                    occlusion_length=args.occlusion_length, seed=args.seed)
    out = write_clip(make_clip(spec), args.output)
    print(f"wrote {spec.frames} frames, truth masks and seeds.txt to {out}")
    return EXIT_OK


def cmd_saliency(args) -> int:
    _apply_threads(args)
    cfg = _resolve_config(args)
    paths, frames = _load_clip(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.efdm:
        (out / "efdm").mkdir(exist_ok=True)
    prev, ssm = None, None
    for t, frame in enumerate(frames):
        sal = compute_saliency(frame, prev, frame_index=t)
        save_gray(sal.values, out / FRAME_PATTERN.format(t))
        if args.efdm:
            ssm = kalman_update_saliency(ssm, sal, cfg.q_var, cfg.r_var)
            try:
                dens = compute_efdm(ssm, cfg.efdm_samples, cfg.seed + t).density
                dens = dens / dens.max()
            except DegenerateSaliencyError:
                dens = np.ones_like(sal.values)
            save_gray(dens, out / "efdm" / FRAME_PATTERN.format(t))
        prev = frame
    print(f"wrote {len(frames)} saliency maps to {out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    workers = _apply_threads(args)
    cfg = _resolve_config(args)
    strategy = normalize_strategy(args.strategy)
    if strategy == "manual" and not args.seeds:
        raise UsageError("--strategy manual requires --seeds")
    seeds = load_seeds(args.seeds) if args.seeds else None
    paths, frames = _load_clip(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.overlay:
        (out / "overlay").mkdir(exist_ok=True)
    seg = Segmenter(cfg, strategy, seeds)
    timings = []
    for t, frame in enumerate(frames):
        res = seg.step(frame)
        save_mask(res.mask, out / FRAME_PATTERN.format(t))
        if args.overlay:
            save_rgb(_overlay(frame, res.mask.mask), out / "overlay" / FRAME_PATTERN.format(t))
        if args.dump_graph is not None and args.dump_graph == t:
            g: FlowGraph = energy_to_graph(seg.last_energy)
            (out / f"graph_{t:06d}.dimacs").write_text(g.to_dimacs(), encoding="ascii")
        timings.append(res.timings)
    manifest = {
        "command": "segment", "input": str(args.input), "frames": len(frames),
        "strategy": strategy, "seed": cfg.seed, "config": cfg.to_dict(),
        "seeds_file": str(args.seeds) if args.seeds else None,
        "workers": workers, "versions": _versions(),
        "mean_stage_ms": {s: float(np.mean([x[s] for x in timings])) for s in STAGES},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(frames)} masks and manifest.json to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_paths = frame_paths(args.pred)
    truth_paths = frame_paths(args.truth)
    if not pred_paths or not truth_paths:
        raise EmptyInputError("no masks found in --pred or --truth")
    if len(pred_paths) != len(truth_paths):
        raise UsageError(f"frame count mismatch: {len(pred_paths)} predicted vs "
                         f"{len(truth_paths)} truth masks")
    report = score([load_mask(p) for p in pred_paths], [load_mask(p) for p in truth_paths])
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    print(f"error={report.error:.5f} recall={report.recall:.5f} "
          f"precision={report.precision:.5f} f_value={report.f_value:.5f}")
    return EXIT_OK


def bench_clip(frames, cfg: SegConfig, warmup: int, measured: int) -> dict:
    """Per-stage ms/frame (mean, min, max) over the measured frames."""
    if warmup + measured > len(frames):
        raise UsageError(f"clip has {len(frames)} frames; need warmup+frames="
                         f"{warmup + measured}")
    seg = Segmenter(cfg, "update")
    rows = [seg.step(f).timings for f in frames[:warmup + measured]][warmup:]
    h, w = frames[0].shape[:2]
    stages = {}
    for s in STAGES + ("total",):
        v = np.array([r[s] for r in rows])
        stages[s] = {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max()),
                     "ms_per_pixel": float(v.mean() / (w * h))}
    return {"resolution": [w, h], "frames": measured, "warmup": warmup,
            "workers": get_workers(), "stages": stages,
            "fps": 1e3 / stages["total"]["mean"]}


def cmd_bench(args) -> int:
    _apply_threads(args)
    cfg = _resolve_config(args)
    n = args.warmup + args.frames
    if args.frames < 1 or args.warmup < 0:
        raise UsageError("--frames must be >= 1 and --warmup >= 0")
    reports = []
    if args.input:
        _, frames = _load_clip(args.input)
        reports.append(bench_clip(frames, cfg, args.warmup, args.frames))
    else:
        for w, h in _parse_resolutions(args.resolutions):
            clip = make_clip(ClipSpec(width=w, height=h, frames=n,
                                      radius=26.0 * h / 288.0, seed=cfg.seed))
            reports.append(bench_clip(clip.frames, cfg, args.warmup, args.frames))
    for r in reports:
        w, h = r["resolution"]
        parts = " ".join(f"{s}={r['stages'][s]['mean']:.1f}" for s in STAGES)
        print(f"{w}x{h}: {r['stages']['total']['mean']:.1f} ms/frame ({r['fps']:.2f} fps) {parts}")
    if args.output:
        _write_json(args.output, {"versions": _versions(), "config": cfg.to_dict(),
                                  "reports": reports})
    return EXIT_OK


def _parse_resolutions(text: str):
    out = []
    for part in text.split(","):
        try:
            w, h = (int(v) for v in part.lower().split("x"))
        except ValueError:
            raise UsageError(f"bad resolution {part!r}; expected WxH") from None
        if w < 16 or h < 16:
            raise UsageError(f"resolution {part!r} is too small")
        out.append((w, h))
    return out


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="salientcut", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker count (default: ${ENV_VAR} or 1)")
        if config:
            sp.add_argument("--config", help="key=value settings file")
            _config_flags(sp)

    g = sub.add_parser("gen", help="write a synthetic clip with ground truth")
    g.add_argument("--output", required=True)
    g.add_argument("--frames", type=int, default=60)
    g.add_argument("--width", type=int, default=352)
    g.add_argument("--height", type=int, default=288)
    g.add_argument("--radius", type=float, default=None)
    g.add_argument("--speed", type=float, default=ClipSpec.speed, help="pixels per frame")
    g.add_argument("--noise", type=float, default=ClipSpec.noise)
    g.add_argument("--disk-contrast", type=float, default=ClipSpec.disk_contrast,
                   help="disk colour: 0 = background level, 1 = saturated yellow")
    g.add_argument("--sign-contrast", type=float, default=ClipSpec.sign_contrast)
    g.add_argument("--occlusion-start", type=int, default=None)
    g.add_argument("--occlusion-length", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("saliency", help="dump per-frame saliency (and EFDM) heatmaps")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--efdm", action="store_true", help="also write EFDM heatmaps")
    common(s)
    s.set_defaults(func=cmd_saliency)

    sg = sub.add_parser("segment", help="segment a frame directory")
    sg.add_argument("--input", required=True)
    sg.add_argument("--output", required=True)
    sg.add_argument("--strategy", default="update",
                    choices=sorted(set(STRATEGIES) | {x.replace("_", "-") for x in STRATEGIES}))
    sg.add_argument("--seeds", help="seed file with 'x y label' lines (manual strategy)")
    sg.add_argument("--overlay", action="store_true", help="also write overlay PNGs")
    sg.add_argument("--dump-graph", type=int, default=None, metavar="FRAME",
                    help="write the flow graph of FRAME in DIMACS format")
    common(sg)
    sg.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--json")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-stage timing report")
    b.add_argument("--input", help="frame directory (default: synthetic clips)")
    b.add_argument("--resolutions", default=",".join(f"{w}x{h}" for w, h in RESOLUTIONS))
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--frames", type=int, default=10)
    b.add_argument("--output", help="JSON report path")
    common(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"salientcut {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyInputError as exc:
        print(f"salientcut {args.command}: empty input: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (OSError, UnsupportedImageError) as exc:
        print(f"salientcut {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed seed files, non-contiguous frames, mismatched sizes
        print(f"salientcut {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
