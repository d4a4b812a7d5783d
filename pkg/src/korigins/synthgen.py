"""Synthetic 16-bit square-segmentation data plus image and manifest I/O.

Each image is a noisy constant background with randomly placed, axis-aligned,
fully interior squares; later squares overwrite earlier ones in both pixels
and labels, and with two target classes the draw order alternates between
them. Generation is deterministic per (seed, image index), so any image can
be regenerated independently.

Pixels are written as binary PGM (P5, maxval 65535, big-endian samples);
labels as 8-bit PGM. The manifest is JSON and round-trips the dataset spec
value-identically.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import Rng

MAX_16BIT = 65535


@dataclass(frozen=True)
class ClassSpec:
    """Per-class intensity distribution on the 16-bit scale."""

    mu: float
    sigma: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mu <= MAX_16BIT:
            raise ConfigError(f"mu must be in [0, {MAX_16BIT}], got {self.mu}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class DatasetSpec:
    background: ClassSpec
    targets: tuple[ClassSpec, ...]
    side_range: tuple[int, int]
    squares_per_image: int
    image_count: int = 400
    height: int = 200
    width: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.targets) <= 2:
            raise ConfigError(f"need 1 or 2 target classes, got {len(self.targets)}")
        lo, hi = self.side_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad side_range {self.side_range}")
        if hi >= min(self.height, self.width):
            raise ConfigError(f"side_range max {hi} must be < image side "
                              f"{min(self.height, self.width)}")
        if self.image_count < 1 or self.squares_per_image < 1:
            raise ConfigError("image_count and squares_per_image must be >= 1")
        # mean square area, assuming no overlap; background must stay visible
        mean_area = np.mean([s * s for s in range(lo, hi + 1)])
        coverage = self.squares_per_image * mean_area / (self.height * self.width)
        if coverage > 0.9:
            raise ConfigError(f"expected square coverage {coverage:.2f} exceeds 0.9; "
                              "background would not remain visible")

    @property
    def class_count(self) -> int:
        return 1 + len(self.targets)

    @property
    def class_specs(self) -> tuple[ClassSpec, ...]:
        return (self.background,) + self.targets


@dataclass
class LabeledImage:
    pixels: np.ndarray   # (H, W) uint16
    labels: np.ndarray   # (H, W) uint8, 0 = background


def squares_for_side(side: int, height: int = 200, width: int = 200) -> int:
    """Square count targeting ~25% coverage, clamped to [5, 50]."""
    n = (height * width) // (4 * side * side)
    return max(5, min(50, n))


def generate_image(spec: DatasetSpec, index: int) -> LabeledImage:
    """Generate image ``index`` of the dataset; deterministic per (seed, index)."""
    rng = Rng(spec.seed, stream=index)
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.uint8)
    lo, hi = spec.side_range
    for s in range(spec.squares_per_image):
        side = rng.randint(lo, hi)
        top = rng.randint(0, h - side)
        left = rng.randint(0, w - side)
        cls = 1 + (s % len(spec.targets))
        labels[top : top + side, left : left + side] = cls
    mus = np.array([c.mu for c in spec.class_specs])
    sigmas = np.array([c.sigma for c in spec.class_specs])
    noise = rng.gaussian_array((h, w))
    values = np.rint(mus[labels] + sigmas[labels] * noise)
    pixels = np.clip(values, 0, MAX_16BIT).astype(np.uint16)
    return LabeledImage(pixels=pixels, labels=labels)


def generate_dataset(spec: DatasetSpec) -> list[LabeledImage]:
    return [generate_image(spec, i) for i in range(spec.image_count)]


def dataset_arrays(images, dtype=np.float64):
    """Stack LabeledImages into model inputs (N,1,H,W) and labels (N,H,W)."""
    x = np.stack([im.pixels for im in images]).astype(dtype)[:, None, :, :]
    y = np.stack([im.labels for im in images]).astype(np.int64)
    return x, y


# ----------------------------------------------------------------------
# PGM I/O


def _write_pgm(array: np.ndarray, maxval: int, path):
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > maxval:
        raise FormatError(f"sample out of range [0, {maxval}]: "
                          f"min {arr.min()}, max {arr.max()}")
    h, w = arr.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.astype(dtype).tobytes())


def _read_pgm(path, expect_16bit: bool):
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # optionally interleaved with '#' comments
    pos, tokens = 0, []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if expect_16bit and maxval != MAX_16BIT:
        raise FormatError(f"{path}: expected maxval {MAX_16BIT}, got {maxval}")
    if not expect_16bit and maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    payload = data[pos:]
    if len(payload) != count * np.dtype(dtype).itemsize:
        raise FormatError(f"{path}: payload size {len(payload)} != expected "
                          f"{count * np.dtype(dtype).itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm16(image: np.ndarray, path):
    _write_pgm(image, MAX_16BIT, path)


def read_pgm16(path) -> np.ndarray:
    return _read_pgm(path, expect_16bit=True)


def write_label_pgm8(labels: np.ndarray, path):
    _write_pgm(labels, 255, path)


def read_label_pgm8(path) -> np.ndarray:
    return _read_pgm(path, expect_16bit=False)


# ----------------------------------------------------------------------
# manifest I/O


def spec_to_dict(spec: DatasetSpec) -> dict:
    return {
        "image_count": spec.image_count,
        "height": spec.height,
        "width": spec.width,
        "background": {"mu": spec.background.mu, "sigma": spec.background.sigma},
        "targets": [{"mu": t.mu, "sigma": t.sigma} for t in spec.targets],
        "side_range": list(spec.side_range),
        "squares_per_image": spec.squares_per_image,
        "seed": spec.seed,
    }


def spec_from_dict(d: dict) -> DatasetSpec:
    required = ("image_count", "height", "width", "background", "targets",
                "side_range", "squares_per_image", "seed")
    for key in required:
        if key not in d:
            raise FormatError(f"manifest missing field {key!r}")
    try:
        background = ClassSpec(**d["background"])
        targets = tuple(ClassSpec(**t) for t in d["targets"])
        return DatasetSpec(
            background=background, targets=targets,
            side_range=tuple(int(v) for v in d["side_range"]),
            squares_per_image=int(d["squares_per_image"]),
            image_count=int(d["image_count"]),
            height=int(d["height"]), width=int(d["width"]),
            seed=int(d["seed"]),
        )
    except ConfigError as exc:
        raise FormatError(f"manifest field out of range: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc


def write_manifest(spec: DatasetSpec, image_names, path):
    """JSON manifest: every spec field plus per-image pixel/label file names."""
    doc = spec_to_dict(spec)
    doc["images"] = [{"pixels": p, "labels": l} for p, l in image_names]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_manifest(path):
    """Return (DatasetSpec, list of (pixels_name, labels_name))."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    spec = spec_from_dict(doc)
    names = [(rec["pixels"], rec["labels"]) for rec in doc.get("images", [])]
    return spec, names


def save_dataset(spec: DatasetSpec, out_dir, manifest_name="manifest.json"):
    """Generate, write PGMs plus manifest into out_dir, return manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    digits = max(4, len(str(spec.image_count - 1)))
    names = []
    for i in range(spec.image_count):
        image = generate_image(spec, i)
        pix = f"img_{i:0{digits}d}.pgm"
        lab = f"lab_{i:0{digits}d}.pgm"
        write_pgm16(image.pixels, os.path.join(out_dir, pix))
        write_label_pgm8(image.labels, os.path.join(out_dir, lab))
        names.append((pix, lab))
    manifest_path = os.path.join(out_dir, manifest_name)
    write_manifest(spec, names, manifest_path)
    return manifest_path


def load_dataset(manifest_path):
    """Read a written dataset back as (spec, list of LabeledImage)."""
    spec, names = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    images = []
    for pix, lab in names:
        pixels = read_pgm16(os.path.join(base, pix))
        labels = read_label_pgm8(os.path.join(base, lab))
        if labels.max() >= spec.class_count:
            raise FormatError(f"{lab}: label {labels.max()} out of range for "
                              f"{spec.class_count} classes")
        images.append(LabeledImage(pixels=pixels, labels=labels))
    return spec, images
