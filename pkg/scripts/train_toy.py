"""Train one mode on synthetic constant-flow scenes and report held-out EPE.

    python scripts/train_toy.py --mode bidirectional --steps 2000 --out runs/bid

Writes model.batw, config.json, losses.txt and val.json (pooled metrics plus
per-scene EPE) into --out.
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from batflow.config import DataConfig, ModelConfig, TrainConfig
from batflow.data import make_dataset
from batflow.training import evaluate, train_toy

log = logging.getLogger("train_toy")


def parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        k, _, v = item.partition("=")
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
        if isinstance(out[k], list):
            out[k] = tuple(out[k])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", default="bidirectional")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pool", type=int, default=512)
    ap.add_argument("--val", type=int, default=40, help="held-out scenes for the pooled EPE")
    ap.add_argument("--median-scenes", type=int, default=10, help="median EPE over the first n")
    ap.add_argument("--val-seed", type=int, default=999)
    ap.add_argument("--eval-every", type=int, default=0, help="log validation EPE every n steps (adds to the timing)")
    ap.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="ModelConfig overrides")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ModelConfig.tiny(mode=args.mode, **parse_overrides(args.set))
    data = DataConfig()
    tc = TrainConfig(steps=args.steps, pool=args.pool, seed=args.seed, log_every=0)
    t0 = time.time()
    train = make_dataset(tc.pool, args.seed + 1, cfg, data)
    val = make_dataset(args.val, args.val_seed, cfg, data)
    log.info("data ready in %.1fs", time.time() - t0)
    history = []

    def cb(step, loss, model):
        if args.eval_every and (step + 1) % args.eval_every == 0:
            m, per = evaluate(model, val)
            history.append({"step": step + 1, "epe": m.epe, "median": float(np.median(per[:args.median_scenes]))})
            log.info("step %d loss %.3f val epe %.3f median %.3f alpha %.3f", step + 1, loss, m.epe,
                     np.median(per[:args.median_scenes]), float(model.radius.alpha.data[0]))

    res = train_toy(cfg, tc, data, dataset=train, seed=args.seed, callback=cb)
    metrics, per = evaluate(res.model, val)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "model.batw").write_bytes(res.checkpoint)
    (args.out / "losses.txt").write_text("".join(f"{x:.9g}\n" for x in res.losses))
    (args.out / "config.json").write_text(json.dumps(
        {"model": cfg.to_dict(), "data": asdict(data), "train": asdict(tc)}, indent=2) + "\n")
    median = float(np.median(per[:args.median_scenes]))
    report = {"metrics": metrics.as_dict(), "per_scene_epe": per, "median_epe": median,
              "seconds": res.seconds, "history": history,
              "scenes": [{"texture": s.scene.texture, "velocity": s.scene.velocity} for s in val]}
    (args.out / "val.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"mode={args.mode} epe={metrics.epe:.4f} median={median:.4f} seconds={res.seconds:.0f}")


if __name__ == "__main__":
    main()
