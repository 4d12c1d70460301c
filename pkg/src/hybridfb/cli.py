"""Command-line entry point.

Subcommands: ``cost``, ``train``, ``verify-strassen``, ``sensitivity``, ``drift``.
Exit codes: 0 success, 1 a verification check failed, 2 usage or config error,
3 runtime failure (e.g. non-finite loss).
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
THREADS_ENV = "HYBRIDFB_NUM_THREADS"


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("hybridfb").joinpath("schemas", f"{name}.schema.json").read_text())


def _clean(x):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _dump(obj, path: Optional[Path]) -> str:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------

def _unit_interval(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def _positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{v} must be positive")
    return v


def _width(s: str) -> float:
    v = _positive_float(s)
    if v > 1:
        raise argparse.ArgumentTypeError(f"{v} is outside (0, 1]")
    return v


def _nonneg_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer")
    if v < 0:
        raise argparse.ArgumentTypeError(f"{v} must be >= 0")
    return v


def _h_list(s: str) -> list[int]:
    """``2..8`` (inclusive range) or ``2,4,8``."""
    try:
        if ".." in s:
            lo, hi = (int(x) for x in s.split(".."))
            hs = list(range(lo, hi + 1))
        else:
            hs = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a list of integers")
    if not hs or min(hs) < 1:
        raise argparse.ArgumentTypeError("hidden widths must be positive integers")
    return hs


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------

def cmd_cost(args, parser) -> int:
    from .arch import QuantMode, QuantPlan, build_arch
    from .cost import table_report, to_csv

    mode = QuantMode(args.mode.upper())
    if mode is QuantMode.HYBRID and not args.alpha:
        parser.error("argument --alpha: required with --mode hybrid")
    if mode is not QuantMode.HYBRID and args.alpha:
        parser.error("argument --alpha: only valid with --mode hybrid")
    if mode in (QuantMode.FP16, QuantMode.TWN) and args.rho:
        parser.error("argument --rho: only valid with --mode strassen or hybrid")
    try:
        spec = build_arch(args.arch, args.width, args.resolution, args.num_classes)
    except ValueError as exc:
        parser.error(f"argument --resolution/--width: {exc}")
    rhos = args.rho or [1.0]
    alphas = args.alpha or [None]
    plans = [QuantPlan(mode, alpha, rho if mode in (QuantMode.STRASSEN, QuantMode.HYBRID) else 1.0,
                       args.fc_hidden_factor)
             for alpha in alphas for rho in (rhos if mode in (QuantMode.STRASSEN, QuantMode.HYBRID) else [1.0])]
    reports = table_report(spec, plans)
    csv_text = to_csv(reports)
    doc = {"kind": "cost", "arch": {"name": spec.name, "width": spec.width_multiplier,
                                    "resolution": spec.resolution, "num_classes": spec.num_classes},
           "reports": [r.to_dict() for r in reports]}
    if args.out:
        out = Path(args.out)
        _dump(doc, out / "cost.json")
        (out / "cost.csv").write_text(csv_text)
    sys.stdout.write(csv_text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

DEFAULT_RUN = {
    "seed": 0,
    "arch": {"name": "tinynet", "width": 1.0, "resolution": None, "num_classes": 10},
    "plan": {"mode": "HYBRID", "alpha": 0.5, "rho": 1.0, "fc_hidden_factor": 2.0},
    "dataset": {"source": "synthetic", "path": None, "eval_path": None, "n_train": 2000, "n_eval": 500,
                "separation": 10.0, "noise_std": 1.0, "flip": False, "crop_padding": 0, "seed": 0},
    "output": {"dir": "runs/default", "checkpoint_every_epoch": False},
}


def resolve_run_config(raw: dict) -> dict:
    """Validate a run config and fill in every default."""
    import jsonschema

    from .train.trainer import TrainConfig

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping")
    try:
        jsonschema.validate(raw, load_schema("run_config"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config error at {where}: {exc.message}")
    cfg = copy.deepcopy(DEFAULT_RUN)
    for key in ("arch", "plan", "dataset", "output"):
        cfg[key].update(raw.get(key, {}))
    cfg["seed"] = raw.get("seed", cfg["seed"])
    cfg["plan"]["mode"] = cfg["plan"]["mode"].upper()
    if cfg["plan"]["mode"] != "HYBRID" and "alpha" not in raw.get("plan", {}):
        cfg["plan"]["alpha"] = None
    if cfg["arch"]["name"] == "tinynet":
        cfg["arch"]["resolution"] = 32
    elif cfg["arch"]["resolution"] is None:
        cfg["arch"]["resolution"] = 224
    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", cfg["seed"])
    try:
        cfg["train"] = TrainConfig.from_dict(train_raw).to_dict()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"config error in train: {exc}")
    return cfg


def _load_yaml(path: str) -> dict:
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}")
    try:
        return yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}")


def _build_dataset(dcfg: dict, num_classes: int):
    from .train.data import DatasetError, SyntheticSpec, generate_synthetic, load_cifar10_binary

    if dcfg["source"] == "synthetic":
        spec = SyntheticSpec(num_classes=num_classes, n_train=dcfg["n_train"], n_eval=dcfg["n_eval"],
                             separation=dcfg["separation"], noise_std=dcfg["noise_std"], flip=dcfg["flip"],
                             crop_padding=dcfg["crop_padding"])
        return generate_synthetic(spec, dcfg["seed"])
    if not dcfg.get("path"):
        raise UsageError("dataset.path is required for cifar10")
    if not Path(dcfg["path"]).exists():
        raise UsageError(f"dataset path {dcfg['path']} does not exist")
    try:
        return load_cifar10_binary(dcfg["path"], dcfg.get("eval_path"), flip=dcfg["flip"],
                                   crop_padding=dcfg["crop_padding"])
    except DatasetError as exc:
        raise UsageError(f"dataset: {exc}")


def cmd_train(args, parser) -> int:
    from .arch import QuantPlan, build_arch
    from .network import instantiate
    from .train.checkpoint import CheckpointError, load_checkpoint
    from .train.trainer import TrainConfig, TrainingDiverged, train

    cfg = resolve_run_config(_load_yaml(args.config))
    if args.out_dir:
        cfg["output"]["dir"] = args.out_dir
    a, p = cfg["arch"], cfg["plan"]
    try:
        spec = build_arch(a["name"], a["width"], a["resolution"], a["num_classes"])
        plan = QuantPlan(p["mode"], p["alpha"], p["rho"], p["fc_hidden_factor"])
    except ValueError as exc:
        raise UsageError(f"config error: {exc}")
    tcfg = TrainConfig.from_dict(cfg["train"])
    ds = _build_dataset(cfg["dataset"], spec.num_classes)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(cfg, out / "config.resolved.json")
    resume = None
    if args.resume:
        try:
            resume = load_checkpoint(args.resume)
        except (OSError, CheckpointError) as exc:
            raise UsageError(f"cannot resume from {args.resume}: {exc}")
        if resume.network.spec != spec or resume.network.plan != plan:
            raise UsageError("checkpoint architecture/plan does not match the config")
        net = resume.network
    else:
        net = instantiate(spec, plan, cfg["seed"])

    def echo(r):
        print(f"[{r['phase']} {r['epoch']}] loss={r['loss']:.4f} train_acc={r['train_acc']:.4f} "
              f"eval_acc={r['eval_acc']:.4f}", flush=True)

    try:
        result = train(net, ds, tcfg, checkpoint_dir=out / "checkpoints", log_path=out / "metrics.jsonl",
                       resume=resume, checkpoint_every_epoch=cfg["output"]["checkpoint_every_epoch"],
                       stop_after_epochs=args.stop_after_epochs, echo=None if args.quiet else echo)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _dump({"final_eval_accuracy": result.final_eval_accuracy, "epochs": len(result.metrics),
           "completed": result.completed}, out / "result.json")
    print(f"final eval accuracy: {result.final_eval_accuracy:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-strassen
# ---------------------------------------------------------------------------

def _strassen_checks(h6_trials: int, seed: int, tamper: bool) -> list[dict]:
    from .quant import TernaryMatrix
    from .spn import (SpnTriple, _STRASSEN_A, _STRASSEN_B, _STRASSEN_C, matmul_bilinear_map,
                      naive_matmul_triple, search_shared_value_spn, shared_value_template, spn_matmul,
                      verify_spn_exact)

    wc = np.array(_STRASSEN_C)
    if tamper:
        wc[0, 0] = -wc[0, 0]
    strassen = SpnTriple(TernaryMatrix(np.array(_STRASSEN_A)), TernaryMatrix(np.array(_STRASSEN_B)),
                         TernaryMatrix(wc))
    rng = np.random.default_rng(seed)
    A = rng.integers(-50, 51, (1000, 2, 2))
    B = rng.integers(-50, 51, (1000, 2, 2))
    bad = sum(not np.array_equal(spn_matmul(*strassen, a, b).data, (a @ b).astype(np.float64))
              for a, b in zip(A, B))
    checks = [{"name": "canonical-strassen-random", "status": "PASS" if bad == 0 else "FAIL",
               "detail": f"h=7, {1000 - bad}/1000 random integer pairs exact"}]
    basis = verify_spn_exact(strassen, matmul_bilinear_map(2, 2, 2))
    checks.append({"name": "canonical-strassen-basis", "status": "PASS" if basis else "FAIL",
                   "detail": "all 16 basis pairs match the 2x2 product map"})
    naive = verify_spn_exact(naive_matmul_triple(2, 2, 2), matmul_bilinear_map(2, 2, 2))
    checks.append({"name": "naive-expansion-h8", "status": "PASS" if naive else "FAIL",
                   "detail": "h=8 one-product-per-term expansion"})
    found = search_shared_value_spn(shared_value_template(), 6, trials=h6_trials, seed=seed) if h6_trials else None
    checks.append({"name": "shared-value-h6-search",
                   "status": "PASS" if found is not None else "SEARCH-EXHAUSTED",
                   "detail": f"filters [a,b],[a,c] with 6 products, {h6_trials} trial budget"})
    return checks


def cmd_verify_strassen(args, parser) -> int:
    checks = _strassen_checks(args.h6_trials, args.seed, args.tamper)
    ok = all(c["status"] != "FAIL" for c in checks)
    for c in checks:
        print(f"{c['status']:<17} {c['name']}: {c['detail']}")
    if args.out:
        _dump({"kind": "verify-strassen", "ok": ok, "checks": checks}, Path(args.out))
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# sensitivity / drift
# ---------------------------------------------------------------------------

def cmd_sensitivity(args, parser) -> int:
    from .train.experiments import BUILTIN_FILTERS, sensitivity_experiment

    if bool(args.filter_file) == bool(args.builtin):
        parser.error("argument --filter-file/--builtin: give exactly one")
    if args.builtin:
        filt, name = BUILTIN_FILTERS[args.builtin], args.builtin
    else:
        try:
            path = Path(args.filter_file)
            filt = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
        except (OSError, ValueError) as exc:
            parser.error(f"argument --filter-file: cannot read {args.filter_file}: {exc}")
        name = None
        if np.shape(filt) != (2, 2):
            parser.error(f"argument --filter-file: filter must be 2x2, got shape {np.shape(filt)}")
    if args.pairs < 4:
        parser.error("argument --pairs: need at least 4 pairs")
    points = sensitivity_experiment(filt, args.h_list, num_pairs=args.pairs, seed=args.seed)
    print("h,loss,sgd_loss,diverged")
    for p in points:
        print(f"{p.h},{p.loss:.6e},{p.sgd_loss:.6e},{int(p.diverged)}")
    if args.out:
        _dump({"kind": "sensitivity", "filter": np.asarray(filt, dtype=float).tolist(), "filter_name": name,
               "pairs": args.pairs, "seed": args.seed,
               "points": [{"h": p.h, "loss": p.loss, "sgd_loss": p.sgd_loss, "diverged": p.diverged}
                          for p in points]}, Path(args.out))
    return EXIT_OK


def cmd_drift(args, parser) -> int:
    from .train.checkpoint import CheckpointError, load_checkpoint
    from .train.experiments import DriftError, drift_analysis

    try:
        before, after = load_checkpoint(args.before), load_checkpoint(args.after)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot read checkpoint: {exc}")
    try:
        rep = drift_analysis(before, after)
    except DriftError as exc:
        raise UsageError(str(exc))
    print(f"filters={sum(len(v) for v in rep.distances.values())} mean={rep.mean:.6g} std={rep.std:.6g} "
          f"skewness={rep.skewness:.4g} excess_kurtosis={rep.excess_kurtosis:.4g}")
    print("histogram:", " ".join(str(c) for c in rep.histogram))
    if args.out:
        _dump({"kind": "drift", **rep.to_dict()}, Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridfb", description="Hybrid filter bank tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cost", help="operation counts, model size, energy and throughput")
    c.add_argument("--arch", default="mobilenet-v1", choices=["mobilenet-v1", "tinynet"])
    c.add_argument("--width", type=_width, default=0.5)
    c.add_argument("--resolution", type=int, default=None)
    c.add_argument("--num-classes", type=int, default=None)
    c.add_argument("--mode", default="fp16", type=str.lower, choices=["fp16", "twn", "strassen", "hybrid"])
    c.add_argument("--alpha", type=_unit_interval, nargs="+")
    c.add_argument("--rho", type=_positive_float, nargs="+")
    c.add_argument("--fc-hidden-factor", type=_positive_float, default=2.0)
    c.add_argument("--out", help="directory for cost.json and cost.csv")
    c.set_defaults(func=cmd_cost)

    t = sub.add_parser("train", help="three-phase training run")
    t.add_argument("--config", required=True, help="YAML run config")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out-dir", help="override output.dir")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--stop-after-epochs", type=int, default=None, help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify-strassen", help="exactness checks for 2x2 SPNs")
    v.add_argument("--h6-trials", type=_nonneg_int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.add_argument("--tamper", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify_strassen)

    s = sub.add_parser("sensitivity", help="L2 loss of strassenified 2x2 filters vs hidden width")
    s.add_argument("--filter-file")
    s.add_argument("--builtin", choices=["matmul2x2", "vertical", "sharpen"])
    s.add_argument("--h-list", type=_h_list, default=list(range(2, 9)))
    s.add_argument("--pairs", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sensitivity)

    d = sub.add_parser("drift", help="full-precision filter drift between two checkpoints")
    d.add_argument("--before", required=True)
    d.add_argument("--after", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_drift)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    threads = os.environ.get(THREADS_ENV)
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(int(threads)):
                return args.func(args, sub)
        return args.func(args, sub)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
