"""Train FP16 and hybrid TinyNets on synthetic data and measure filter drift.

Uses the same configs as ``hybridfb train --config tutorials/configs/...``.
Each run takes a few minutes on one core; pass ``--quick`` for a smoke run.

    python tutorials/04_train_hybrid.py [--quick]
"""
import sys
from pathlib import Path

import yaml

from hybridfb.cli import main as cli
from hybridfb.train.checkpoint import load_checkpoint
from hybridfb.train.experiments import drift_analysis

here = Path(__file__).parent
quick = "--quick" in sys.argv
accs = {}
for name in ("tinynet_fp16", "tinynet_hybrid"):
    cfg = yaml.safe_load((here / "configs" / f"{name}.yaml").read_text())
    if quick:
        cfg["dataset"]["n_train"] = 128
        for ph in cfg["train"]["phases"]:
            ph["epochs"], ph["warmup_epochs"] = 1, 0
    out = Path("runs") / name
    out.mkdir(parents=True, exist_ok=True)
    cfg["output"]["dir"] = str(out)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg))
    if cli(["train", "--config", str(out / "config.yaml")]) != 0:
        sys.exit(f"{name} failed")
    accs[name] = float(__import__("json").loads((out / "result.json").read_text())["final_eval_accuracy"])

print(f"\nFP16 {accs['tinynet_fp16']:.3f}  hybrid {accs['tinynet_hybrid']:.3f}")

# How far do the full-precision filters of the hybrid banks move once
# quantization starts? Compare the end of FP_TRAIN with the end of training.
ck = Path("runs/tinynet_hybrid/checkpoints")
rep = drift_analysis(load_checkpoint(ck / "phase1_FP_TRAIN.ckpt"), load_checkpoint(ck / "phase3_FROZEN.ckpt"))
print(f"fp filter drift: mean {rep.mean:.4g}, std {rep.std:.4g}, skew {rep.skewness:.3g}")
for layer, d in rep.per_layer.items():
    print(f"  {layer:<12} mean {d['mean']:.4g}")
