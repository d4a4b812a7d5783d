"""Command-line interface: one executable with subcommands.

    generate    write a synthetic dataset (PGMs + manifest) from a spec file
    train       train a named network on manifest datasets
    eval        score a checkpoint on a manifest dataset
    sweep-rfl   object-size / receptive-field sweep
    sweep-hd    intensity-distribution heatmap sweep
    export      re-render CSVs, heatmaps, and snapshots from a sweep result
    rfl         print a network's receptive field length and parameter count
    param-audit computed vs reference parameter counts for all builders
    hd          Hellinger distance between two Gaussian class distributions

Exits 0 on success, 1 with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import metrics, netbuild, sweeps, synthgen
from .errors import ConfigError
from .netbuild import Network, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate_macc, train


def _dtype(args):
    return np.float32 if getattr(args, "f32", False) else np.float64


def _load_arrays(manifest_path, dtype):
    spec, images = synthgen.load_dataset(manifest_path)
    return spec, synthgen.dataset_arrays(images, dtype=dtype)


def cmd_generate(args):
    with open(args.spec) as fh:
        spec = synthgen.spec_from_dict(json.load(fh))
    out_dir = os.path.dirname(os.path.abspath(args.manifest)) or "."
    manifest = synthgen.save_dataset(spec, out_dir,
                                     manifest_name=os.path.basename(args.manifest))
    print(f"wrote {spec.image_count} images, manifest {manifest}")


def cmd_train(args):
    dtype = _dtype(args)
    data_spec, train_xy = _load_arrays(args.data, dtype)
    _, val_xy = _load_arrays(args.val, dtype)
    if args.classes != data_spec.class_count:
        raise ConfigError(f"--classes {args.classes} but dataset has "
                          f"{data_spec.class_count} classes")
    class_specs = [(c.mu, c.sigma) for c in data_spec.class_specs]
    spec = netbuild.build_by_name(args.net, args.classes, class_specs)
    net = Network(spec, seed=args.seed, dtype=dtype)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                         lr_conv=args.lr_conv, lr_korigins=args.lr_ko,
                         seed=args.seed)
    history = train(net, train_xy, val_xy, config)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{spec.name}.korg")
    save_checkpoint(net, ckpt)
    with open(os.path.join(args.out, f"{spec.name}.spec.json"), "w") as fh:
        fh.write(spec.to_json())
        fh.write("\n")
    with open(os.path.join(args.out, f"{spec.name}.history.json"), "w") as fh:
        json.dump(history, fh, indent=2)
        fh.write("\n")
    final = history[-1]
    print(f"trained {spec.name}: loss {final['loss']:.6f}, "
          f"val MAcc {final['val_macc']:.4f}, checkpoint {ckpt}")


def _spec_for_checkpoint(args):
    spec_path = getattr(args, "spec", None)
    if spec_path is None:
        root, _ = os.path.splitext(args.checkpoint)
        spec_path = root + ".spec.json"
    if not os.path.exists(spec_path):
        raise ConfigError(f"network spec not found at {spec_path}; pass --spec")
    with open(spec_path) as fh:
        return netbuild.NetworkSpec.from_json(fh.read())


def cmd_eval(args):
    dtype = _dtype(args)
    spec = _spec_for_checkpoint(args)
    net = load_checkpoint(args.checkpoint, spec, dtype=dtype)
    data_spec, (x, y) = _load_arrays(args.data, dtype)
    if data_spec.class_count != spec.class_count:
        raise ConfigError(f"checkpoint predicts {spec.class_count} classes but "
                          f"dataset has {data_spec.class_count}")
    print(f"MAcc {evaluate_macc(net, x, y):.4f}")


def cmd_sweep_rfl(args):
    result = sweeps.run_rfl_sweep(
        out_dir=args.out, rfls=tuple(args.rfls), ratios=tuple(args.ratios),
        noise=args.noise == "on", image_count=args.images, epochs=args.epochs,
        seed=args.seed, dtype=_dtype(args), families=tuple(args.families))
    sweeps.export_results(result, args.out)
    print(f"rfl sweep complete: {len(result.cells)} cells in {args.out}")


def cmd_sweep_hd(args):
    result = sweeps.run_hd_sweep(
        problem=args.problem, size=args.size, out_dir=args.out,
        networks=tuple(args.networks), delta_mus=tuple(args.delta_mus),
        delta_sigmas=tuple(args.delta_sigmas), image_count=args.images,
        epochs=args.epochs, seed=args.seed, dtype=_dtype(args))
    sweeps.export_results(result, args.out)
    print(f"hd sweep complete: {len(result.cells)} cells in {args.out}")


def cmd_export(args):
    with open(args.result) as fh:
        result = sweeps.SweepResult.from_json(fh.read())
    files = sweeps.export_results(result, args.out)
    print(f"wrote {len(files)} files to {args.out}")


def cmd_rfl(args):
    class_specs = [(20000.0, 0.0)] * args.classes  # placeholder clamp values
    spec = netbuild.build_by_name(args.net, args.classes, class_specs)
    print(f"{spec.name}: RFL {netbuild.rfl_of_network(spec)}, "
          f"{netbuild.param_count(spec):,} parameters")


def cmd_param_audit(args):
    class2 = [(20000.0, 0.0), (25000.0, 0.0)]
    class3 = class2 + [(30000.0, 0.0)]
    specs = [netbuild.build_by_name(n, 2, class2)
             for n in ("rfl8", "rfl18", "rfl38", "krfl8", "krfl18", "krfl38",
                       "rfl14", "krfl14", "rfl32", "krfl32", "colour")]
    specs += [netbuild.build_by_name(n, 3, class3) for n in ("rfl14", "krfl14")]
    print(f"{'network':<10} {'classes':>7} {'rfl':>5} {'params':>12} {'reference':>12}")
    for row in netbuild.param_audit(specs):
        ref = f"{row['reference']:,}" if row["reference"] is not None else "-"
        print(f"{row['network']:<10} {row['classes']:>7} {row['rfl']:>5} "
              f"{row['params']:>12,} {ref:>12}")


def cmd_hd(args):
    print(f"{metrics.hellinger(args.mu1, args.sigma1, args.mu2, args.sigma2):.6f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="korigins",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.add_argument("--spec", required=True, help="dataset spec JSON file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--net", required=True,
                   choices=["rfl8", "rfl18", "rfl38", "krfl8", "krfl18", "krfl38",
                            "rfl14", "krfl14", "rfl32", "krfl32", "colour"])
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--lr-conv", type=float, default=1e-3, dest="lr_conv")
    p.add_argument("--lr-ko", type=float, default=100.0, dest="lr_ko")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--f32", action="store_true", help="32-bit fast path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--spec", help="network spec JSON (default: next to checkpoint)")
    p.add_argument("--f32", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-rfl", help="object size / receptive field sweep")
    p.add_argument("--noise", choices=["on", "off"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rfls", type=int, nargs="+", default=[8, 18, 38])
    p.add_argument("--ratios", type=float, nargs="+", default=list(sweeps.RFL_RATIOS))
    p.add_argument("--families", nargs="+", default=["rfl", "krfl"])
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f32", action="store_true")
    p.set_defaults(func=cmd_sweep_rfl)

    p = sub.add_parser("sweep-hd", help="intensity-distribution heatmap sweep")
    p.add_argument("--problem", choices=["detect", "tracer"], required=True)
    p.add_argument("--size", choices=["small", "large"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--networks", nargs="+", default=["rfl14", "krfl14"])
    p.add_argument("--delta-mus", type=float, nargs="+",
                   default=list(sweeps.HD_DELTA_MUS), dest="delta_mus")
    p.add_argument("--delta-sigmas", type=float, nargs="+",
                   default=list(sweeps.HD_DELTA_SIGMAS), dest="delta_sigmas")
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f32", action="store_true")
    p.set_defaults(func=cmd_sweep_hd)

    p = sub.add_parser("export", help="render tables and images from a sweep result")
    p.add_argument("--result", required=True, help="result.json from a sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("rfl", help="print RFL and parameter count")
    p.add_argument("--net", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_rfl)

    p = sub.add_parser("param-audit", help="computed vs reference parameter counts")
    p.set_defaults(func=cmd_param_audit)

    p = sub.add_parser("hd", help="Hellinger distance between two Gaussians")
    p.add_argument("--mu1", type=float, required=True)
    p.add_argument("--sigma1", type=float, required=True)
    p.add_argument("--mu2", type=float, required=True)
    p.add_argument("--sigma2", type=float, required=True)
    p.set_defaults(func=cmd_hd)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
