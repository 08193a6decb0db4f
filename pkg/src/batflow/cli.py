"""``bat`` command line: synth, voxelize, train, infer, eval, viz.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import (ConfigError, ModelConfig, RunConfig, apply_section,
                     parse_config_text)
from .data import window_groups
from .events import EventError, SyntheticSceneSpec, read_events, save_events, synthesize_events
from .flowio import FlowFormatError, read_flo, write_flo, write_flow_ppm
from .nn import CheckpointError, decode_checkpoint
from .training import DivergedLoss, EmptyMask, compute_metrics, train_toy, write_metrics
from .voxel import VoxelError, encode_vxg1, split_groups, voxelize

log = logging.getLogger("bat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pair(text: str, sep: str, cast=float) -> tuple:
    parts = text.lower().split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two values separated by {sep!r}: {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None


def _size(text):
    return _pair(text, "x", int)


def _vec(text):
    return _pair(text, ",", float)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bat", description="Event-based optical flow with bidirectional temporal correlation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize an event stream with ground-truth flow")
    s.add_argument("--scene", default="random-bandlimited",
                   choices=["checkerboard", "random-bandlimited", "bar", "constant"])
    s.add_argument("--size", type=_size, default=(64, 64), help="WxH")
    s.add_argument("--flow", type=_vec, default=(0.0, 0.0), help="velocity vx,vy in px per interval")
    s.add_argument("--accel", type=_vec, default=(0.0, 0.0), help="acceleration in px per interval^2")
    s.add_argument("--duration-us", type=int, default=100_000)
    s.add_argument("--interval-us", type=int, default=None, help="default: half the duration")
    s.add_argument("--threshold", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["evt1", "csv"], default="evt1")
    s.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("voxelize", help="write a VXG1 voxel grid")
    v.add_argument("--events", required=True, type=Path)
    v.add_argument("--t0", type=float, required=True)
    v.add_argument("--t1", type=float, required=True)
    v.add_argument("--bins", type=int, default=15)
    v.add_argument("--width", type=int, help="geometry for header-less CSV input")
    v.add_argument("--height", type=int)
    v.add_argument("--out", required=True, type=Path)

    t = sub.add_parser("train", help="train on synthetic constant-flow scenes")
    _model_flags(t)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--pool", type=int, help="number of synthetic training scenes")
    t.add_argument("--scene-size", type=_size, help="WxH of training scenes")
    t.add_argument("--out", required=True, type=Path)

    i = sub.add_parser("infer", help="predict flow for the window after --t-ref")
    _model_flags(i)
    i.add_argument("--checkpoint", required=True, type=Path)
    i.add_argument("--events", required=True, type=Path)
    i.add_argument("--t-ref", type=float, help="t_i, end of the past window (default: one interval)")
    i.add_argument("--interval-us", type=float, default=50_000)
    i.add_argument("--width", type=int)
    i.add_argument("--height", type=int)
    i.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("eval", help="compare a predicted .flo with ground truth")
    e.add_argument("--pred", required=True, type=Path)
    e.add_argument("--gt", required=True, type=Path)
    e.add_argument("--out-txt", type=Path)
    e.add_argument("--out-json", type=Path)

    z = sub.add_parser("viz", help="render a .flo with the colour wheel to PPM")
    z.add_argument("--flow", required=True, type=Path)
    z.add_argument("--out", required=True, type=Path)
    z.add_argument("--max-flow", type=float, default=None)
    return p


def _model_flags(p):
    p.add_argument("--config", type=Path, help="key = value config with [model]/[data]/[train] sections")
    p.add_argument("--mode", choices=["bidirectional", "forward-only", "backward-only"])
    p.add_argument("--groups", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--full", action="store_true", help="full-size model instead of the tiny preset")


def load_run_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    model = ModelConfig() if getattr(args, "full", False) else ModelConfig.tiny()
    rc = RunConfig(model=model)
    if getattr(args, "config", None):
        sections = parse_config_text(Path(args.config).read_text())
        if "model" in sections:
            rc.model = apply_section(rc.model, sections["model"])
        if "data" in sections:
            rc.data = apply_section(rc.data, sections["data"])
        if "train" in sections:
            rc.train = apply_section(rc.train, sections["train"])
        rc.seed = int(sections.get("", {}).get("seed", rc.seed))
    flags = {k: getattr(args, k, None) for k in ("mode", "groups", "bins", "radius", "iters")}
    flags = {k: v for k, v in flags.items() if v is not None}
    if flags:
        rc.model = replace(rc.model, **flags)
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    tflags = {k: getattr(args, k, None) for k in ("steps", "batch", "lr", "pool")}
    tflags = {k: v for k, v in tflags.items() if v is not None}
    rc.train = replace(rc.train, seed=rc.seed, **tflags)
    if getattr(args, "scene_size", None):
        rc.data = replace(rc.data, size=tuple(args.scene_size))
    return rc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    scene = SyntheticSceneSpec(texture=args.scene, size=tuple(args.size), velocity=tuple(args.flow),
                               acceleration=tuple(args.accel), duration_us=args.duration_us,
                               interval_us=args.interval_us, threshold=args.threshold, seed=args.seed)
    stream, flows = synthesize_events(scene)
    args.out.mkdir(parents=True, exist_ok=True)
    save_events(stream, args.out / f"events.{args.format}")
    for k, f in enumerate(flows):
        write_flo(args.out / f"flow_{k:04d}.flo", f)
    meta = asdict(scene) | {"interval": scene.interval, "events": len(stream)}
    (args.out / "scene.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"events={len(stream)} intervals={len(flows)} out={args.out}")
    return EXIT_OK


def _geometry(args):
    if args.width and args.height:
        return args.width, args.height
    return None


def cmd_voxelize(args) -> int:
    stream = read_events(args.events, _geometry(args))
    v = voxelize(stream, args.t0, args.t1, args.bins)
    args.out.write_bytes(encode_vxg1(v))
    print(f"bins={v.bins} height={v.shape[1]} width={v.shape[2]} sum={v.data.sum():.6g}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = load_run_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    res = train_toy(rc.model, rc.train, rc.data, seed=rc.seed)
    (args.out / "model.batw").write_bytes(res.checkpoint)
    (args.out / "losses.txt").write_text("".join(f"{x:.9g}\n" for x in res.losses))
    (args.out / "config.json").write_text(json.dumps(
        {"model": rc.model.to_dict(), "data": asdict(rc.data), "train": asdict(rc.train)}, indent=2) + "\n")
    final = res.losses[-1] if res.losses else float("nan")
    print(f"steps={len(res.losses)} final_loss={final:.6g} out={args.out}")
    return EXIT_OK


def _model_for_checkpoint(args):
    from .model import BATNet

    cfg_path = args.config if args.config and args.config.suffix == ".json" else \
        args.checkpoint.with_name("config.json")
    if cfg_path.exists():
        cfg = ModelConfig.from_dict(json.loads(cfg_path.read_text())["model"])
        flags = {k: getattr(args, k) for k in ("mode", "groups", "bins", "radius", "iters")
                 if getattr(args, k, None) is not None}
        cfg = replace(cfg, **flags)
    else:
        cfg = load_run_config(args).model
    model = BATNet(cfg)
    model.load_state_dict(decode_checkpoint(args.checkpoint.read_bytes()))
    return model


def cmd_infer(args) -> int:
    model = _model_for_checkpoint(args)
    cfg = model.cfg
    stream = read_events(args.events, _geometry(args))
    dt = args.interval_us
    t_ref = args.t_ref if args.t_ref is not None else dt
    if cfg.mode == "backward-only":
        # future flow from the past window alone
        groups = np.stack([g.data for g in split_groups(voxelize(stream, t_ref - dt, t_ref, cfg.bins),
                                                        cfg.groups)]).astype(np.float32)
    else:
        groups = window_groups(stream, t_ref - dt, t_ref, t_ref + dt, cfg.bins, cfg.groups)
    flow = model.predict(groups[None])[0]
    write_flo(args.out, flow)
    u, v = flow.reshape(2, -1).mean(1)
    print(f"mode={cfg.mode} mean_u={u:.4f} mean_v={v:.4f} out={args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, gt = read_flo(args.pred), read_flo(args.gt)
    m = compute_metrics(pred, gt)
    print(m.report())
    if args.out_txt or args.out_json:
        write_metrics(m, args.out_txt or args.pred.with_suffix(".metrics.txt"), args.out_json)
    return EXIT_OK


def cmd_viz(args) -> int:
    write_flow_ppm(args.out, read_flo(args.flow), args.max_flow)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "voxelize": cmd_voxelize, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "viz": cmd_viz}


def _thread_limit():
    n = os.environ.get("BAT_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"bat: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:       # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        # non-finite values are caught explicitly and mapped to exit code 3
        with _thread_limit(), np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except (DivergedLoss, T.NonFiniteError, FloatingPointError) as e:
        print(f"bat: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, T.ShapeMismatch) as e:
        print(f"bat: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EventError, VoxelError, FlowFormatError, CheckpointError, EmptyMask, OSError) as e:
        print(f"bat: data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
