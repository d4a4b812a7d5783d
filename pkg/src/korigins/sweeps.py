"""Experiment sweep runners and results export.

Two sweep families:

* run_rfl_sweep trains the RFL/KRFL 8/18/38 networks over object-size to
  receptive-field ratios {0.3, 0.6, 0.95, 1.3, 2, 3}, with or without
  sigma = 2000 noise on both classes.
* run_hd_sweep trains RFL14/KRFL14 over a 5x5 grid of intensity-mean and
  noise-sigma offsets, for the object-detection (one target on a noisy
  background) and tracer (two near-identical targets) problems at
  small (6-12 px) or large (20-30 px) square sizes.

Every cell records the seeds and dataset specs needed to regenerate it; the
recorded accuracy is re-evaluated from the saved checkpoint, so reloading
the checkpoint on the regenerated validation set reproduces it exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, FormatError
from .metrics import ConfusionCounts  # noqa: F401  (re-exported for callers)
from .netbuild import (Network, build_by_name, load_checkpoint, save_checkpoint)
from .synthgen import (ClassSpec, DatasetSpec, dataset_arrays, generate_dataset,
                       spec_from_dict, spec_to_dict, squares_for_side,
                       write_label_pgm8, write_pgm16)
from .training import TrainConfig, evaluate_macc, predict_labels, train

RFL_RATIOS = (0.3, 0.6, 0.95, 1.3, 2.0, 3.0)
HD_DELTA_MUS = (0, 500, 1000, 2000, 4000)
HD_DELTA_SIGMAS = (0, 430, 1100, 2000, 4250)

DETECT_BACKGROUND = ClassSpec(20000, 1000)
TRACER_BACKGROUND = ClassSpec(16500, 900)
TRACER_FIRST_TARGET = ClassSpec(20000, 1000)
SIZE_RANGES = {"small": (6, 12), "large": (20, 30)}
SIZE_SQUARES = {"small": 50, "large": 25}


@dataclass
class SweepResult:
    kind: str                    # "rfl" or "hd"
    provenance: dict
    cells: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "SweepResult":
        try:
            d = json.loads(text)
            return SweepResult(kind=d["kind"], provenance=d["provenance"],
                               cells=d["cells"])
        except (KeyError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed sweep result: {exc}") from exc


def _cell_seed(*parts) -> int:
    """Stable 63-bit seed derived from heterogeneous identifying parts."""
    text = json.dumps(parts, sort_keys=True)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def run_cell(net_name: str, train_spec: DatasetSpec, val_spec: DatasetSpec,
             config: TrainConfig, net_seed: int, out_dir=None, tag: str = "cell",
             dtype=np.float64):
    """Train one sweep cell and return its record.

    The recorded MAcc comes from re-evaluating the saved checkpoint (32-bit
    weights), so a later reload reproduces it bit-for-bit. Without an output
    directory the trained network is evaluated in place.
    """
    spec = build_by_name(net_name, train_spec.class_count,
                         [(c.mu, c.sigma) for c in train_spec.class_specs])
    net = Network(spec, seed=net_seed, dtype=dtype)
    train_xy = dataset_arrays(generate_dataset(train_spec), dtype=dtype)
    val_xy = dataset_arrays(generate_dataset(val_spec), dtype=dtype)
    history = train(net, train_xy, val_xy, config)

    checkpoint = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint = os.path.join(out_dir, f"{tag}.korg")
        save_checkpoint(net, checkpoint)
        net = load_checkpoint(checkpoint, spec, seed=net_seed, dtype=dtype)
    final_macc = evaluate_macc(net, *val_xy)
    return {
        "network": net_name,
        "macc": final_macc,
        "epochs": config.epochs,
        "seed": config.seed,
        "net_seed": net_seed,
        "train_spec": spec_to_dict(train_spec),
        "val_spec": spec_to_dict(val_spec),
        "checkpoint": os.path.basename(checkpoint) if checkpoint else None,
        "history": history,
    }


def reevaluate_cell(cell: dict, cell_dir, dtype=np.float64) -> float:
    """Regenerate a cell's validation data from its record and re-score it."""
    val_spec = spec_from_dict(cell["val_spec"])
    spec = build_by_name(cell["network"], val_spec.class_count,
                         [(c.mu, c.sigma) for c in val_spec.class_specs])
    net = load_checkpoint(os.path.join(cell_dir, cell["checkpoint"]), spec,
                          seed=cell["net_seed"], dtype=dtype)
    val_xy = dataset_arrays(generate_dataset(val_spec), dtype=dtype)
    return evaluate_macc(net, *val_xy)


def _noise_classes(noise: bool):
    sigma = 2000.0 if noise else 0.0
    return ClassSpec(20000, sigma), (ClassSpec(25000, sigma),)


def run_rfl_sweep(out_dir=None, rfls=(8, 18, 38), ratios=RFL_RATIOS,
                  noise: bool = False, image_count: int = 100,
                  epochs: int = 10, seed: int = 0, dtype=np.float64,
                  families=("rfl", "krfl")) -> SweepResult:
    """Object-size versus receptive-field sweep for the RFL/KRFL families."""
    background, targets = _noise_classes(noise)
    provenance = {
        "rfls": list(rfls), "ratios": list(ratios), "noise": noise,
        "families": list(families), "image_count": image_count,
        "epochs": epochs, "seed": seed, "lr_conv": 1e-3, "lr_korigins": 100.0,
    }
    provenance["config_hash"] = _config_hash(provenance)
    result = SweepResult(kind="rfl", provenance=provenance)
    for rfl in rfls:
        for family in families:
            name = f"{family}{rfl}"
            for ratio in ratios:
                side = max(1, round(ratio * rfl))
                squares = squares_for_side(side)
                base = DatasetSpec(background=background, targets=targets,
                                   side_range=(side, side),
                                   squares_per_image=squares,
                                   image_count=image_count,
                                   seed=_cell_seed("rfl-train", seed, name, ratio))
                val = DatasetSpec(background=background, targets=targets,
                                  side_range=(side, side),
                                  squares_per_image=squares,
                                  image_count=image_count,
                                  seed=_cell_seed("rfl-val", seed, name, ratio))
                config = TrainConfig(epochs=epochs, lr_conv=1e-3,
                                     lr_korigins=100.0,
                                     seed=_cell_seed("rfl-run", seed, name, ratio))
                cell = run_cell(name, base, val, config,
                                net_seed=_cell_seed("rfl-net", seed, name, ratio),
                                out_dir=out_dir, tag=f"{name}_r{ratio:g}",
                                dtype=dtype)
                cell["ratio"] = ratio
                cell["side"] = side
                result.cells.append(cell)
    if out_dir is not None:
        _write_result(result, out_dir)
    return result


def hd_dataset_specs(problem: str, size: str, delta_mu: float, delta_sigma: float,
                     image_count: int, train_seed: int, val_seed: int):
    """Train/validation dataset specs for one heatmap cell."""
    if problem == "detect":
        background = DETECT_BACKGROUND
        targets = (ClassSpec(background.mu + delta_mu, background.sigma + delta_sigma),)
    elif problem == "tracer":
        background = TRACER_BACKGROUND
        first = TRACER_FIRST_TARGET
        targets = (first, ClassSpec(first.mu + delta_mu, first.sigma + delta_sigma))
    else:
        raise ConfigError(f"problem must be 'detect' or 'tracer', got {problem!r}")
    if size not in SIZE_RANGES:
        raise ConfigError(f"size must be 'small' or 'large', got {size!r}")
    common = dict(background=background, targets=targets,
                  side_range=SIZE_RANGES[size],
                  squares_per_image=SIZE_SQUARES[size],
                  image_count=image_count)
    return (DatasetSpec(seed=train_seed, **common),
            DatasetSpec(seed=val_seed, **common))


def run_hd_sweep(problem: str, size: str, out_dir=None,
                 networks=("rfl14", "krfl14"), delta_mus=HD_DELTA_MUS,
                 delta_sigmas=HD_DELTA_SIGMAS, image_count: int = 100,
                 epochs: int = 10, seed: int = 0, dtype=np.float64) -> SweepResult:
    """Intensity-distribution heatmap sweep (5x5 grid per network by default)."""
    provenance = {
        "problem": problem, "size": size, "networks": list(networks),
        "delta_mus": list(delta_mus), "delta_sigmas": list(delta_sigmas),
        "image_count": image_count, "epochs": epochs, "seed": seed,
        "lr_conv": 1e-4, "lr_korigins": 100.0,
    }
    provenance["config_hash"] = _config_hash(provenance)
    result = SweepResult(kind="hd", provenance=provenance)
    for name in networks:
        for ds in delta_sigmas:
            for dm in delta_mus:
                key = (problem, size, name, dm, ds)
                train_spec, val_spec = hd_dataset_specs(
                    problem, size, dm, ds, image_count,
                    train_seed=_cell_seed("hd-train", seed, *key),
                    val_seed=_cell_seed("hd-val", seed, *key))
                config = TrainConfig(epochs=epochs, lr_conv=1e-4,
                                     lr_korigins=100.0,
                                     seed=_cell_seed("hd-run", seed, *key))
                cell = run_cell(name, train_spec, val_spec, config,
                                net_seed=_cell_seed("hd-net", seed, *key),
                                out_dir=out_dir, tag=f"{name}_dm{dm}_ds{ds}",
                                dtype=dtype)
                cell["delta_mu"] = dm
                cell["delta_sigma"] = ds
                result.cells.append(cell)
    if out_dir is not None:
        _write_result(result, out_dir)
    return result


def _write_result(result: SweepResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        fh.write(result.to_json())
        fh.write("\n")


# ----------------------------------------------------------------------
# export


def export_results(result: SweepResult, out_dir):
    """Write CSV tables, greyscale MAcc heatmaps, and per-cell snapshots.

    Heatmap PGM samples are round(MAcc * 65535). Snapshots (input image and
    predicted label map of the first validation image) are rendered from the
    recorded checkpoint when one exists next to result.json in out_dir.
    Re-running export on the same result is byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if result.kind == "rfl":
        ratios = result.provenance["ratios"]
        networks = []
        by_net = {}
        for cell in result.cells:
            by_net.setdefault(cell["network"], {})[cell["ratio"]] = cell
            if cell["network"] not in networks:
                networks.append(cell["network"])
        csv_path = os.path.join(out_dir, "rfl_sweep.csv")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["network"] + [f"{r:g}" for r in ratios])
            for name in networks:
                row = by_net[name]
                writer.writerow([name] + [f"{row[r]['macc']:.4f}" if r in row else ""
                                          for r in ratios])
        written.append(csv_path)
    else:
        dms = result.provenance["delta_mus"]
        dss = result.provenance["delta_sigmas"]
        networks = list(dict.fromkeys(c["network"] for c in result.cells))
        lookup = {(c["network"], c["delta_mu"], c["delta_sigma"]): c
                  for c in result.cells}
        for name in networks:
            csv_path = os.path.join(out_dir, f"hd_{name}.csv")
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["delta_sigma"] + [f"{m:g}" for m in dms])
                for ds in dss:
                    row = [f"{ds:g}"]
                    for dm in dms:
                        cell = lookup.get((name, dm, ds))
                        row.append(f"{cell['macc']:.4f}" if cell else "")
                    writer.writerow(row)
            written.append(csv_path)

    written.extend(_export_heatmaps(result, out_dir))
    written.extend(_export_snapshots(result, out_dir))
    return written


def _export_heatmaps(result: SweepResult, out_dir):
    written = []
    networks = list(dict.fromkeys(c["network"] for c in result.cells))
    for name in networks:
        cells = [c for c in result.cells if c["network"] == name]
        if result.kind == "rfl":
            ratios = result.provenance["ratios"]
            grid = np.array([[next((c["macc"] for c in cells if c["ratio"] == r), 0.0)
                              for r in ratios]])
        else:
            dms = result.provenance["delta_mus"]
            dss = result.provenance["delta_sigmas"]
            grid = np.array([[next((c["macc"] for c in cells
                                    if c["delta_mu"] == dm and c["delta_sigma"] == ds),
                                   0.0)
                              for dm in dms] for ds in dss])
        path = os.path.join(out_dir, f"heatmap_{name}.pgm")
        write_pgm16(np.rint(grid * 65535).astype(np.uint16), path)
        written.append(path)
    return written


def _export_snapshots(result: SweepResult, out_dir):
    written = []
    for cell in result.cells:
        if not cell.get("checkpoint"):
            continue
        ckpt = os.path.join(out_dir, cell["checkpoint"])
        if not os.path.exists(ckpt):
            continue
        tag = os.path.splitext(cell["checkpoint"])[0]
        val_spec = spec_from_dict(cell["val_spec"])
        spec = build_by_name(cell["network"], val_spec.class_count,
                             [(c.mu, c.sigma) for c in val_spec.class_specs])
        net = load_checkpoint(ckpt, spec, seed=cell["net_seed"])
        first = generate_dataset(DatasetSpec(**{**spec_to_dict_kwargs(val_spec),
                                                "image_count": 1}))[0]
        pred = predict_labels(net, first.pixels[None, None, :, :].astype(float))[0]
        in_path = os.path.join(out_dir, f"{tag}_input.pgm")
        pred_path = os.path.join(out_dir, f"{tag}_pred.pgm")
        write_pgm16(first.pixels, in_path)
        write_label_pgm8(pred.astype(np.uint8), pred_path)
        written.extend([in_path, pred_path])
    return written


def spec_to_dict_kwargs(spec: DatasetSpec) -> dict:
    d = spec_to_dict(spec)
    d["background"] = ClassSpec(**d["background"])
    d["targets"] = tuple(ClassSpec(**t) for t in d["targets"])
    d["side_range"] = tuple(d["side_range"])
    return d
