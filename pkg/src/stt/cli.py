"""Batch command-line interface.

Subcommands: bvh2seq, synth, pretrain, finetune, eval, grid, gradcheck.
Exit codes: 0 success, 1 data errors, 2 usage or config errors.
`STT_THREADS` caps grid-cell parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bvh as bvhmod
from . import gradcheck as gc
from . import report
from .experiments import (Metrics, SynthSpec, TrainConfig, evaluate, finetune,
                          load_config, pretrain, run_grid, synth_dataset)
from .model import (NetworkConfig, SpatialTransformerNet, load_checkpoint,
                    save_checkpoint)
from .preprocess import resample, view_normalize
from .sequence import load_dataset, save_dataset, write_skseq
from .skeletons import (NTU25_BONES, NTU25_LEFT_HIP, NTU25_RIGHT_HIP,
                        NTU25_ROOT, data_path, load_bones)

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    pass


def _load_configs(args) -> tuple[NetworkConfig, TrainConfig]:
    if getattr(args, "config", None):
        try:
            net_config, train_config = load_config(args.config)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
    else:
        net_config, train_config = NetworkConfig(), TrainConfig()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        train_config = replace(train_config, seed=args.seed)
    return net_config, train_config


def _bones(args):
    if getattr(args, "bones", None):
        v, bones = load_bones(args.bones)
        return bones
    return NTU25_BONES


# ---------------------------------------------------------------------------
# subcommands

def cmd_bvh2seq(args) -> int:
    mapping = bvhmod.load_mapping(args.mapping or data_path("ntu25_from_axis72.map"))
    if os.path.isdir(args.input):
        files = sorted(os.path.join(args.input, f) for f in os.listdir(args.input)
                       if f.lower().endswith(".bvh"))
    else:
        files = [args.input]
    if not files:
        print("no BVH files found", file=sys.stderr)
        return EXIT_DATA
    os.makedirs(args.out, exist_ok=True)
    failures = 0
    for path in files:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = bvhmod.parse_bvh(fh.read())
            seq = bvhmod.retarget(doc, mapping)
            if args.normalize:
                seq = view_normalize(seq, NTU25_LEFT_HIP, NTU25_RIGHT_HIP, NTU25_ROOT)
            if args.frames:
                seq = resample(seq, args.frames)
            stem = os.path.splitext(os.path.basename(path))[0]
            out_path = os.path.join(args.out, stem + ".skq")
            write_skseq(seq, out_path)
            print(f"{path}: C={seq.channels} T={seq.frames} V={seq.joints} -> {out_path}")
        except (bvhmod.BvhError, ValueError, KeyError, OSError) as exc:
            failures += 1
            print(f"{path}: FAILED: {exc}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, samples_per_class=args.samples,
                     num_joints=args.joints, frames=args.frames,
                     class_distance=args.distance, class_offset=args.offset,
                     seed=args.seed)
    ds = synth_dataset(spec)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences ({spec.num_classes} classes) to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    net_config, train_config = _load_configs(args)
    ds = load_dataset(args.data)
    if ds.num_classes != net_config.num_classes:
        raise ConfigError(
            f"dataset has {ds.num_classes} classes but config declares "
            f"{net_config.num_classes}; set num_classes in the config file")
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "log.txt")
    with open(log_path, "w", encoding="utf-8") as log_file:
        result = pretrain(ds, net_config, train_config, bones=_bones(args),
                          log_fn=lambda line: print(line, file=log_file))
    save_checkpoint(result.best_state, os.path.join(args.out, "checkpoint.ckpt"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(net_config.to_text())
    report.plot_training_curves(result.log_lines, os.path.join(args.out, "curves.png"))
    print(f"best epoch {result.best_epoch}: val_acc={result.best_val_acc:.4f}")
    return EXIT_OK


def _write_metrics_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ratio,aug,seed,accuracy\n")
        for ratio, aug, seed, acc in rows:
            fh.write(f"{ratio:g},{aug},{seed},{acc:.6f}\n")


def _write_confusion_csv(metrics: Metrics, path):
    np.savetxt(path, metrics.confusion, fmt="%d", delimiter=",")


def cmd_finetune(args) -> int:
    net_config, train_config = _load_configs(args)
    ds = load_dataset(args.data)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    os.makedirs(args.out, exist_ok=True)
    metrics, net = finetune(checkpoint, ds, args.ratio, args.aug, net_config,
                            train_config, bones=_bones(args))
    _write_metrics_csv([(args.ratio, args.aug, train_config.seed, metrics.accuracy)],
                       os.path.join(args.out, "metrics.csv"))
    _write_confusion_csv(metrics, os.path.join(args.out, "confusion.csv"))
    report.plot_confusion(metrics.confusion, os.path.join(args.out, "confusion.png"),
                          ds.class_names)
    save_checkpoint(net.state_dict(), os.path.join(args.out, "checkpoint.ckpt"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(net.config.to_text())
    print(f"test accuracy: {metrics.accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net_config, train_config = _load_configs(args)
    ds = load_dataset(args.data)
    if ds.num_classes != net_config.num_classes:
        raise ConfigError(
            f"class-count mismatch: dataset has {ds.num_classes}, "
            f"config declares {net_config.num_classes}")
    net = SpatialTransformerNet(net_config, _bones(args), seed=train_config.seed)
    net.load_state_dict(load_checkpoint(args.checkpoint))
    metrics = evaluate(net, ds)
    print(f"accuracy: {metrics.accuracy:.4f} over {metrics.total} samples")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_confusion_csv(metrics, os.path.join(args.out, "confusion.csv"))
        report.plot_confusion(metrics.confusion, os.path.join(args.out, "confusion.png"),
                              ds.class_names)
    return EXIT_OK


def cmd_grid(args) -> int:
    net_config, train_config = _load_configs(args)
    ds = load_dataset(args.data)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    ratios = tuple(float(r) for r in args.ratios.split(","))
    factors = tuple(int(f) for f in args.factors.split(","))
    threads = int(os.environ.get("STT_THREADS", "1"))
    os.makedirs(args.out, exist_ok=True)
    results = run_grid(checkpoint, ds, net_config, train_config, ratios=ratios,
                       factors=factors, bones=_bones(args), max_workers=threads)
    rows = [(r, f, train_config.seed, m.accuracy) for r, f, m in results]
    _write_metrics_csv(rows, os.path.join(args.out, "grid.csv"))
    for r, f, m in results:
        cell = f"confusion_r{int(round(r * 100))}_a{f}.csv"
        _write_confusion_csv(m, os.path.join(args.out, cell))
    report.plot_grid_heatmap(results, os.path.join(args.out, "grid.png"))
    for r, f, m in results:
        print(f"ratio={r:g} aug={f}: accuracy={m.accuracy:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    layers = args.layer or None
    results = gc.run_suites(layers, h=args.h, tol=args.tol,
                            max_coords_per_param=args.coords)
    all_ok = True
    for res in results:
        ok = res.passed(tol=args.tol)
        all_ok &= ok
        print(f"{res.name}: max_rel_error={res.max_rel_error:.3e} "
              f"ok_fraction={res.fraction_ok:.4f} ({res.checked} coords) "
              f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_DATA


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stt",
                                     description="skeleton action recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bvh2seq", help="convert BVH recordings to .skq sequences")
    p.add_argument("input", help="BVH file or directory")
    p.add_argument("--mapping", help="retarget table (default: bundled 72->25 table)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--normalize", action="store_true", help="root and yaw-align sequences")
    p.add_argument("--frames", type=int, default=64,
                   help="resample to this many frames (0 keeps the original length)")
    p.set_defaults(func=cmd_bvh2seq)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--samples", type=int, default=20, help="samples per class")
    p.add_argument("--joints", type=int, default=25)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--distance", type=float, default=1.0, help="inter-class distance knob")
    p.add_argument("--offset", type=int, default=0, help="class identity offset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, fn, extra in (
        ("pretrain", cmd_pretrain, ()),
        ("finetune", cmd_finetune, ("checkpoint", "ratio", "aug")),
        ("eval", cmd_eval, ("checkpoint",)),
        ("grid", cmd_grid, ("checkpoint", "ratios", "factors")),
    ):
        p = sub.add_parser(name, help=f"{name} pipeline")
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--bones", help="bone list file (default: bundled 25-joint list)")
        if "checkpoint" in extra:
            required = name == "eval"
            p.add_argument("--checkpoint", required=required,
                           help="checkpoint file" + ("" if required else
                                                     " (omit for a random frozen backbone)"))
        if "ratio" in extra:
            p.add_argument("--ratio", type=float, required=True)
            p.add_argument("--aug", type=int, default=4)
        if "ratios" in extra:
            p.add_argument("--ratios", default="0.1,0.3,0.5,0.7")
            p.add_argument("--factors", default="2,4,8")
        p.add_argument("--out", required=(name != "eval"), default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward rules")
    p.add_argument("--layer", action="append", choices=sorted(gc.SUITES),
                   help="restrict to one layer (repeatable)")
    p.add_argument("--h", type=float, default=gc.DEFAULT_H)
    p.add_argument("--tol", type=float, default=gc.DEFAULT_TOL)
    p.add_argument("--coords", type=int, default=200,
                   help="max coordinates checked per parameter")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
