"""Declarative network specs, receptive-field arithmetic, canonical builders
for the RFL/KRFL architecture families, and checkpoint serialization.

A NetworkSpec is an immutable, JSON-serializable layer list from which the
receptive field length (RFL), the trainable parameter count, and a runnable
Network all derive. Builders are pure; a built Network follows the layers
module's single-owner rule.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, FormatError
from .rng import Rng
from . import layers as L

CHECKPOINT_MAGIC = b"KORG"
CHECKPOINT_VERSION = 1

# Reference parameter counts for architectures whose interior widths are not
# fully pinned down by the reconstruction; reported by param_audit, never
# asserted. Keys with a _3 suffix are the 3-class variants.
REFERENCE_PARAM_COUNTS = {
    "rfl8": 71042,
    "rfl18": 352962,
    "rfl38": 1480002,
    "krfl8": 187846,
    "krfl18": 930886,
    "krfl38": 3901766,
    "rfl14": 330522,
    "krfl14": 274406,
    "rfl14_3": 445843,
    "krfl14_3": 275169,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str                      # conv | tconv | pool | korigins | concat | softmax
    in_ch: int = 0
    out_ch: int = 0
    k: int = 0
    stride: int = 1
    padding: str = "same"
    activation: str | None = None
    bias: bool = True
    weight_count: int = 0          # K-Origins only
    init: str = "glorot"           # glorot | fixed | gauss | readout
    init_args: tuple = ()
    skip_from: int = -1            # concat only: index of the skip source layer


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    depth_label: str
    class_count: int
    layers: tuple[LayerSpec, ...]

    def to_json(self) -> str:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return json.dumps(d, indent=2)

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        try:
            d = json.loads(text)
            layers = tuple(LayerSpec(**{**l, "init_args": tuple(l.get("init_args", ()))})
                           for l in d["layers"])
            return NetworkSpec(name=d["name"], depth_label=d["depth_label"],
                               class_count=int(d["class_count"]), layers=layers)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed network spec: {exc}") from exc


# ----------------------------------------------------------------------
# receptive field and parameter arithmetic


def rfl_of_network(spec: NetworkSpec) -> int:
    """Receptive field length at the input, counting only the encoder path.

    Walks the encoder (everything before the first transposed convolution)
    backwards from the deepest feature with r = 1, applying
    r_prev = stride * r + (kernel - stride) at each spatial layer.
    """
    encoder = []
    for layer in spec.layers:
        if layer.kind == "tconv":
            break
        encoder.append(layer)
    r = 1
    for layer in reversed(encoder):
        if layer.kind == "conv":
            r = layer.stride * r + (layer.k - layer.stride)
        elif layer.kind == "pool":
            r = 2 * r  # kernel 2, stride 2
    return r


def param_count(spec: NetworkSpec) -> int:
    total = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            total += layer.in_ch * layer.out_ch * layer.k * layer.k
            total += layer.out_ch if layer.bias else 0
        elif layer.kind == "tconv":
            total += layer.in_ch * layer.out_ch * 4 + layer.out_ch
        elif layer.kind == "korigins":
            total += layer.weight_count
    return total


def param_audit(specs) -> list[dict]:
    """Computed vs reference parameter counts for a sequence of specs."""
    rows = []
    for spec in specs:
        key = spec.name if spec.class_count == 2 else f"{spec.name}_{spec.class_count}"
        rows.append({
            "network": spec.name,
            "classes": spec.class_count,
            "rfl": rfl_of_network(spec),
            "params": param_count(spec),
            "reference": REFERENCE_PARAM_COUNTS.get(key),
        })
    return rows


# ----------------------------------------------------------------------
# builders

_DEPTH_LABELS = {2: "II", 3: "III", 4: "IV"}
_RFL_DEPTH = {8: 2, 18: 3, 38: 4}
_LEVEL_WIDTHS = (40, 80, 160, 320)
DEEP_ORIGIN_MU = 20000.0
DEEP_ORIGIN_SIGMA = 5000.0


def _conv(in_ch, out_ch, k, activation="relu", bias=True):
    return LayerSpec(kind="conv", in_ch=in_ch, out_ch=out_ch, k=k,
                     activation=activation, bias=bias)


def _korigins_clamp(class_specs):
    values = tuple(float(v) for v in L.korigins_clamp_init(class_specs))
    return LayerSpec(kind="korigins", weight_count=len(values),
                     init="fixed", init_args=values)


def _korigins_gauss(k):
    return LayerSpec(kind="korigins", weight_count=k, init="gauss",
                     init_args=(DEEP_ORIGIN_MU, DEEP_ORIGIN_SIGMA))


def build_rfl(rfl: int, class_count: int = 2) -> NetworkSpec:
    """Canonical single-conv-per-level encoder-decoder with RFL 8, 18, or 38.

    Filter widths 40/80/160/320 double per level; the decoder mirrors the
    encoder with 2x2 stride-2 transposed convolutions, channel concatenation
    with the same-level encoder conv output, and one 3x3 conv per level.
    """
    return _build_rfl_like(rfl, class_count, korigins=False, class_specs=None)


def build_krfl(rfl: int, class_count: int = 2, class_specs=None,
               deep_weight_count: int = 3, decoder_korigins: bool = False) -> NetworkSpec:
    """build_rfl layout with an origin layer at the input of every encoder level.

    The top layer gets 2 weights per class via clamp initialization (needs
    per-class (mu, sigma) in class_specs); deeper layers get
    deep_weight_count Gaussian-initialized weights.
    """
    if class_specs is None:
        raise ConfigError("build_krfl requires class_specs for clamp initialization")
    class_specs = list(class_specs)
    if len(class_specs) != class_count:
        raise ConfigError(f"expected {class_count} class specs, got {len(class_specs)}")
    return _build_rfl_like(rfl, class_count, korigins=True, class_specs=class_specs,
                           deep_weight_count=deep_weight_count,
                           decoder_korigins=decoder_korigins)


def _build_rfl_like(rfl, class_count, korigins, class_specs,
                    deep_weight_count=3, decoder_korigins=False):
    if rfl not in _RFL_DEPTH:
        raise ConfigError(f"unsupported RFL {rfl}; expected one of {sorted(_RFL_DEPTH)}")
    depth = _RFL_DEPTH[rfl]
    widths = _LEVEL_WIDTHS[:depth]
    layers: list[LayerSpec] = []
    skip_src: list[int] = []
    in_ch = 1
    for level, width in enumerate(widths):
        if level > 0:
            layers.append(LayerSpec(kind="pool", k=2, stride=2))
        if korigins:
            if level == 0:
                ko = _korigins_clamp(class_specs)
            else:
                ko = _korigins_gauss(deep_weight_count)
            layers.append(ko)
            in_ch *= ko.weight_count + 1
        layers.append(_conv(in_ch, width, 3))
        skip_src.append(len(layers) - 1)
        in_ch = width
    for level in range(depth - 2, -1, -1):
        width = widths[level]
        layers.append(LayerSpec(kind="tconv", in_ch=in_ch, out_ch=width))
        layers.append(LayerSpec(kind="concat", skip_from=skip_src[level]))
        in_ch = width + widths[level]
        if korigins and decoder_korigins:
            ko = _korigins_gauss(deep_weight_count)
            layers.append(ko)
            in_ch *= ko.weight_count + 1
        layers.append(_conv(in_ch, width, 3))
        in_ch = width
    layers.append(_conv(in_ch, class_count, 1, activation=None))
    layers.append(LayerSpec(kind="softmax"))
    name = f"{'krfl' if korigins else 'rfl'}{rfl}"
    return NetworkSpec(name=name, depth_label=_DEPTH_LABELS[depth],
                       class_count=class_count, layers=tuple(layers))


def build_rfl14_family(class_count: int = 2, with_korigins: bool = False,
                       class_specs=None, level2_width: int = 200,
                       bottleneck_widths=(80, 80), decoder_widths=(40, 40),
                       extra_level: bool = False) -> NetworkSpec:
    """Depth-II family with two 3x3 convs per level (RFL 14).

    Without origin layers the first level widens to level2_width so the
    second level's first conv receives that many features; with them, a
    4-weight origin layer at the end of level 1 produces the same feature
    count (40 * (4 + 1) = 200) and serves as the skip source. extra_level
    appends one more encoder/decoder level, taking the RFL to 32.
    """
    if class_count not in (2, 3):
        raise ConfigError(f"class_count must be 2 or 3, got {class_count}")
    if with_korigins:
        if class_specs is None:
            raise ConfigError("origin-layer variants require class_specs")
        class_specs = list(class_specs)
        if len(class_specs) != class_count:
            raise ConfigError(f"expected {class_count} class specs, got {len(class_specs)}")

    layers: list[LayerSpec] = []
    if with_korigins:
        ko = _korigins_clamp(class_specs)
        layers.append(ko)
        layers.append(_conv(1 * (ko.weight_count + 1), 40, 3))
        layers.append(_conv(40, 40, 3))
        boundary = _korigins_gauss(4)  # 40 * (4 + 1) = 200 features into level 2
        layers.append(boundary)
        skip1 = len(layers) - 1
        l2_in = 40 * (boundary.weight_count + 1)
    else:
        layers.append(_conv(1, 40, 3))
        layers.append(_conv(40, level2_width, 3))
        skip1 = len(layers) - 1
        l2_in = level2_width
    skip1_ch = l2_in

    b0, b1 = bottleneck_widths
    if extra_level:
        layers.append(LayerSpec(kind="pool", k=2, stride=2))
        layers.append(_conv(l2_in, b0, 3))
        layers.append(_conv(b0, b1, 3))
        skip2 = len(layers) - 1
        skip2_ch = b1
        if with_korigins:
            ko2 = _korigins_gauss(3)
            layers.append(ko2)
            skip2 = len(layers) - 1
            skip2_ch = b1 * (ko2.weight_count + 1)
        layers.append(LayerSpec(kind="pool", k=2, stride=2))
        layers.append(_conv(skip2_ch if with_korigins else b1, 2 * b0, 3))
        layers.append(_conv(2 * b0, 2 * b1, 3))
        layers.append(LayerSpec(kind="tconv", in_ch=2 * b1, out_ch=b0))
        layers.append(LayerSpec(kind="concat", skip_from=skip2))
        layers.append(_conv(b0 + skip2_ch, b0, 3))
        layers.append(_conv(b0, b1, 3))
        bottom_out = b1
    else:
        layers.append(LayerSpec(kind="pool", k=2, stride=2))
        layers.append(_conv(l2_in, b0, 3))
        layers.append(_conv(b0, b1, 3))
        bottom_out = b1

    d0, d1 = decoder_widths
    layers.append(LayerSpec(kind="tconv", in_ch=bottom_out, out_ch=d0))
    layers.append(LayerSpec(kind="concat", skip_from=skip1))
    layers.append(_conv(d0 + skip1_ch, d0, 3))
    layers.append(_conv(d0, d1, 3))
    layers.append(_conv(d1, class_count, 1, activation=None))
    layers.append(LayerSpec(kind="softmax"))

    rfl = 32 if extra_level else 14
    name = f"{'krfl' if with_korigins else 'rfl'}{rfl}"
    return NetworkSpec(name=name, depth_label="III" if extra_level else "II",
                       class_count=class_count, layers=tuple(layers))


def build_rfl32_family(class_count: int = 2, with_korigins: bool = False,
                       class_specs=None) -> NetworkSpec:
    """Deeper RFL14 variant: one extra level added the way RFL8 extends to RFL18."""
    return build_rfl14_family(class_count, with_korigins, class_specs,
                              extra_level=True)


def build_colour_net(weight_count: int = 1, class_count: int = 2,
                     init_weights=None) -> NetworkSpec:
    """Single-pixel intensity classifier: origin layer, bias-free 1x1 conv, softmax.

    For one weight and two classes this is 5 trainable parameters in total.
    The 1x1 head is initialized as an antisymmetric readout of the shifted
    channels (class c reads shifted channel k with +scale when k < c, -scale
    otherwise; the passthrough channel starts at zero). This makes each origin
    weight act as a learnable intensity threshold from the first step: the
    head already classifies by the sign pattern of the shifted channels, so
    gradient descent moves the origins until the thresholds separate the
    classes, instead of relying on the head to relearn the task from random
    weights at intensity scale.
    """
    if weight_count < 1:
        raise ConfigError(f"weight_count must be >= 1, got {weight_count}")
    if init_weights is not None:
        vals = tuple(float(v) for v in init_weights)
        if len(vals) != weight_count:
            raise ConfigError(f"expected {weight_count} init weights, got {len(vals)}")
        ko = LayerSpec(kind="korigins", weight_count=weight_count,
                       init="fixed", init_args=vals)
    else:
        ko = _korigins_gauss(weight_count)
    head = LayerSpec(kind="conv", in_ch=weight_count + 1, out_ch=class_count,
                     k=1, activation=None, bias=False,
                     init="readout", init_args=(10.0,))
    layers = (ko, head, LayerSpec(kind="softmax"))
    return NetworkSpec(name="colour", depth_label="II", class_count=class_count,
                       layers=layers)


def build_by_name(name: str, class_count: int = 2, class_specs=None) -> NetworkSpec:
    """CLI-facing builder lookup: rfl8..krfl38, rfl14, krfl14, rfl32, krfl32, colour."""
    name = name.lower()
    if name == "colour":
        return build_colour_net(class_count=class_count)
    if name in ("rfl8", "rfl18", "rfl38"):
        return build_rfl(int(name[3:]), class_count)
    if name in ("krfl8", "krfl18", "krfl38"):
        return build_krfl(int(name[4:]), class_count, class_specs)
    if name in ("rfl14", "rfl32"):
        return build_rfl14_family(class_count, False, extra_level=name == "rfl32")
    if name in ("krfl14", "krfl32"):
        return build_rfl14_family(class_count, True, class_specs,
                                  extra_level=name == "krfl32")
    raise ConfigError(f"unknown network name {name!r}")


# ----------------------------------------------------------------------
# runnable network


class Network:
    """Layer objects assembled from a NetworkSpec, with skip-aware backprop."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers: list[L.Layer] = []
        for i, ls in enumerate(spec.layers):
            rng = Rng(seed, stream=i)
            if ls.kind == "conv":
                layer = L.Conv2D(ls.in_ch, ls.out_ch, ls.k, ls.stride, ls.padding,
                                 ls.activation, ls.bias, rng=rng)
                if ls.init == "readout":
                    scale = float(ls.init_args[0]) if ls.init_args else 10.0
                    kern = np.zeros_like(layer.params["kernels"])
                    for c in range(ls.out_ch):
                        for ch in range(1, ls.in_ch):  # channel 0 is passthrough
                            kern[c, ch] = scale if (ch - 1) < c else -scale
                    layer.params["kernels"] = kern
            elif ls.kind == "tconv":
                layer = L.TConv2D(ls.in_ch, ls.out_ch, rng=rng)
            elif ls.kind == "pool":
                layer = L.MaxPool2x2()
            elif ls.kind == "korigins":
                if ls.init == "fixed":
                    weights = np.array(ls.init_args, dtype=float)
                else:
                    mu, sigma = ls.init_args
                    weights = rng.gaussian_array(ls.weight_count, mu, sigma)
                layer = L.KOrigins(weights)
            elif ls.kind == "concat":
                layer = L.ConcatChannels(ls.skip_from)
            elif ls.kind == "softmax":
                layer = L.SoftmaxPixelwise()
            else:
                raise ConfigError(f"unknown layer kind {ls.kind!r}")
            layer.astype(self.dtype)
            self.layers.append(layer)
        self._outputs: list[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        self._outputs = []
        cur = x
        for layer in self.layers:
            if isinstance(layer, L.ConcatChannels):
                cur = layer.forward(cur, self._outputs[layer.skip_from])
            else:
                cur = layer.forward(cur)
            self._outputs.append(cur)
        return cur

    def backward(self, upstream: np.ndarray, from_logits: bool = False) -> np.ndarray:
        """Backpropagate to the input, populating every layer's grads.

        With from_logits=True the final softmax layer is skipped: upstream is
        then the gradient with respect to the head logits (the fused
        softmax/cross-entropy form).
        """
        start = len(self.layers) - 1
        if from_logits:
            if self.layers[-1].kind != "softmax":
                raise ConfigError("from_logits requires a terminal softmax layer")
            start -= 1
        pending: dict[int, np.ndarray] = {}
        g = np.asarray(upstream, dtype=self.dtype)
        for i in range(start, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            layer = self.layers[i]
            if isinstance(layer, L.ConcatChannels):
                g, g_skip = layer.backward(g)
                src = layer.skip_from
                pending[src] = pending[src] + g_skip if src in pending else g_skip
            else:
                g = layer.backward(g)
        return g

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def named_params(self):
        """Yield (record_name, layer, param_name) in a stable order."""
        for i, layer in enumerate(self.layers):
            for pname in layer.params:
                yield f"{i:03d}.{layer.kind}.{pname}", layer, pname

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)


# ----------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(net: Network, path):
    """Binary checkpoint: magic, version, then (name, dims, f32 payload) records."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, layer, pname in net.named_params():
            arr = np.ascontiguousarray(layer.params[pname], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, context):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {context}")
    return buf


def load_checkpoint(path, spec: NetworkSpec, seed: int = 0,
                    dtype=np.float64) -> Network:
    """Rebuild a Network from spec and overwrite its parameters from file.

    Validates magic, version, record names, and shape agreement; raises
    FormatError naming the offending record. Values round-trip at 32-bit
    precision.
    """
    net = Network(spec, seed=seed, dtype=dtype)
    expected = list(net.named_params())
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        for name, layer, pname in expected:
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"{name} header"))
            file_name = _read_exact(fh, name_len, "record name").decode("utf-8")
            if file_name != name:
                raise FormatError(f"unexpected record {file_name!r}, wanted {name!r}")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{name} dims"))
            if tuple(dims) != layer.params[pname].shape:
                raise FormatError(f"record {name}: shape {dims} != spec shape "
                                  f"{layer.params[pname].shape}")
            count = int(np.prod(dims)) if dims else 1
            payload = _read_exact(fh, 4 * count, f"{name} payload")
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
            layer.params[pname] = arr.astype(net.dtype)
        if fh.read(1):
            raise FormatError("trailing bytes after final checkpoint record")
    return net
