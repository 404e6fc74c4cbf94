"""Sequential inference models, layer enumeration and the ALFM file format.

A model is an ordered list of layers over a fixed input shape. Injectable
layers (conv2d, conv3d, linear) get a dense 0-based index that is stable
across runs; fault records address layers through that index. Shape
inference runs at construction, so incompatible consecutive layers are
rejected before anything executes.

Built-in models are generated from a fixed 64-bit seed through the
package's portable PRNG (see ``faultforge.prng``), so every installation
reproduces identical weights without shipping weight blobs.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import tensor_core as tc
from .errors import FileFormatError, ValidationError
from .prng import Xoshiro256StarStar, derive_seed
from .tensor_core import INJECTABLE_KINDS, LayerKind

# Seed of record for all built-in model weights.
BUILTIN_WEIGHT_SEED = 0xC0FFEE

MODEL_MAGIC = b"ALFM"
MODEL_VERSION = 1

_KIND_CODES = {k: i for i, k in enumerate(LayerKind)}
_CODE_KINDS = {i: k for k, i in _KIND_CODES.items()}


@dataclass
class Layer:
    """One node of the sequential graph.

    ``clamp_lo``/``clamp_hi`` are optional range-restriction bounds applied
    to an injectable layer's output after fault injection and before the
    next operator; they are what :func:`faultforge.campaign.harden_with_clipper`
    sets. Keeping the clamp inside the layer (rather than as a separate
    node) preserves layer indices between a model and its hardened variant
    and lets monitors observe post-clamp values.
    """

    kind: LayerKind
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    pool_size: int = 0
    clamp_lo: float | None = None
    clamp_hi: float | None = None


@dataclass(frozen=True)
class LayerInfo:
    """Dimension metadata of one injectable layer.

    ``neuron_dims`` is (channels, depth, height, width) of the output
    activation with depth 1 for non-3d layers; ``weight_dims`` is
    (out_ch, in_ch, k_depth, k_h, k_w) with trailing 1s for linear layers.
    The element counts are the products of those tuples.
    """

    index: int
    kind: LayerKind
    neuron_dims: tuple[int, int, int, int]
    weight_dims: tuple[int, int, int, int, int]

    @property
    def element_count_neurons(self) -> int:
        return math.prod(self.neuron_dims)

    @property
    def element_count_weights(self) -> int:
        return math.prod(self.weight_dims)


def _infer_shapes(layers, input_shape):
    """Propagate ``input_shape`` through ``layers``; returns per-layer output shapes."""
    shape = tuple(input_shape)
    shapes = []
    for pos, layer in enumerate(layers):
        k = layer.kind
        if k is LayerKind.CONV2D:
            if len(shape) != 3:
                raise ValidationError(f"layer {pos} (conv2d) expects CxHxW input, got {shape}")
            c_out, c_in, kh, kw = layer.weights.shape
            if c_in != shape[0]:
                raise ValidationError(
                    f"layer {pos} (conv2d) input channels {shape[0]} != weight channels {c_in}")
            h = (shape[1] + 2 * layer.padding - kh) // layer.stride + 1
            w = (shape[2] + 2 * layer.padding - kw) // layer.stride + 1
            if h < 1 or w < 1:
                raise ValidationError(f"layer {pos} (conv2d) output collapses to {h}x{w}")
            shape = (c_out, h, w)
        elif k is LayerKind.CONV3D:
            if len(shape) != 4:
                raise ValidationError(f"layer {pos} (conv3d) expects CxDxHxW input, got {shape}")
            c_out, c_in, kd, kh, kw = layer.weights.shape
            if c_in != shape[0]:
                raise ValidationError(
                    f"layer {pos} (conv3d) input channels {shape[0]} != weight channels {c_in}")
            d = (shape[1] + 2 * layer.padding - kd) // layer.stride + 1
            h = (shape[2] + 2 * layer.padding - kh) // layer.stride + 1
            w = (shape[3] + 2 * layer.padding - kw) // layer.stride + 1
            if d < 1 or h < 1 or w < 1:
                raise ValidationError(f"layer {pos} (conv3d) output collapses to {d}x{h}x{w}")
            shape = (c_out, d, h, w)
        elif k is LayerKind.LINEAR:
            if len(shape) != 1:
                raise ValidationError(f"layer {pos} (linear) expects flat input, got {shape}")
            c_out, c_in = layer.weights.shape
            if c_in != shape[0]:
                raise ValidationError(
                    f"layer {pos} (linear) input length {shape[0]} != weight columns {c_in}")
            shape = (c_out,)
        elif k is LayerKind.MAXPOOL2D:
            if len(shape) != 3:
                raise ValidationError(f"layer {pos} (maxpool2d) expects CxHxW input, got {shape}")
            h = (shape[1] - layer.pool_size) // layer.stride + 1
            w = (shape[2] - layer.pool_size) // layer.stride + 1
            if h < 1 or w < 1:
                raise ValidationError(f"layer {pos} (maxpool2d) output collapses to {h}x{w}")
            shape = (shape[0], h, w)
        elif k is LayerKind.FLATTEN:
            shape = (math.prod(shape),)
        elif k in (LayerKind.RELU, LayerKind.SOFTMAX):
            pass
        else:  # pragma: no cover - enum is closed
            raise ValidationError(f"unknown layer kind {k}")
        shapes.append(shape)
    return shapes


class Model:
    """Immutable sequential inference graph.

    ``head`` is "classification" (output = logits) or "detection" (output =
    a raw box-regression vector decoded by :func:`decode_detections` into
    ``num_boxes`` boxes over ``num_classes`` classes).
    """

    def __init__(self, name, input_shape, layers, head="classification",
                 num_classes=None, num_boxes=0):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.head = head
        self.num_boxes = num_boxes
        for layer in self.layers:
            if layer.weights is not None:
                layer.weights = tc.as_tensor(layer.weights)
            if layer.bias is not None:
                layer.bias = tc.as_tensor(layer.bias)
        self.output_shapes = _infer_shapes(self.layers, self.input_shape)
        self.output_shape = self.output_shapes[-1] if self.layers else self.input_shape
        if head == "classification":
            self.num_classes = num_classes if num_classes is not None else self.output_shape[0]
        else:
            if not num_classes or num_boxes < 1:
                raise ValidationError("detection head needs num_classes and num_boxes")
            self.num_classes = num_classes
            expected = num_boxes * (5 + num_classes)
            if self.output_shape != (expected,):
                raise ValidationError(
                    f"detection head needs output length {expected}, got {self.output_shape}")
        self._injectable_positions = [
            pos for pos, layer in enumerate(self.layers) if layer.kind in INJECTABLE_KINDS
        ]
        self._infos = [
            _layer_info(idx, self.layers[pos], self.output_shapes[pos])
            for idx, pos in enumerate(self._injectable_positions)
        ]

    # -- structure ---------------------------------------------------------

    @property
    def injectable_infos(self) -> list[LayerInfo]:
        return list(self._infos)

    @property
    def injectable_positions(self) -> list[int]:
        """Layer-list positions of the injectable layers, by injectable index."""
        return list(self._injectable_positions)

    def injectable_layer(self, index: int) -> Layer:
        return self.layers[self._injectable_positions[index]]

    def param_count(self) -> int:
        total = 0
        for layer in self.layers:
            if layer.weights is not None:
                total += layer.weights.size
            if layer.bias is not None:
                total += layer.bias.size
        return total

    def weights_hash(self) -> str:
        """SHA-256 over all parameter bytes, in layer order."""
        h = hashlib.sha256()
        for layer in self.layers:
            if layer.weights is not None:
                h.update(layer.weights.tobytes())
            if layer.bias is not None:
                h.update(layer.bias.tobytes())
        return h.hexdigest()

    def with_weight_overrides(self, overrides) -> "Model":
        """Copy-on-write variant: ``overrides`` maps injectable index -> weights array.

        Layers not overridden share their arrays with this model.
        """
        layers = []
        by_pos = {self._injectable_positions[i]: w for i, w in overrides.items()}
        for pos, layer in enumerate(self.layers):
            if pos in by_pos:
                layers.append(replace(layer, weights=by_pos[pos]))
            else:
                layers.append(replace(layer))
        m = Model.__new__(Model)
        m.__dict__.update(self.__dict__)
        m.layers = layers
        m._injectable_positions = list(self._injectable_positions)
        m._infos = list(self._infos)
        return m

    # -- execution ---------------------------------------------------------

    def forward(self, x, inject=None, observe=None) -> np.ndarray:
        """Run one inference.

        ``inject(injectable_index, out)`` is called on every injectable
        layer's output right after bias addition (the post-MAC value) and
        may mutate ``out`` in place; range-restriction bounds, when set,
        clamp afterwards. ``observe(position, out)`` sees every layer's
        (post-clamp) output as a read-only view, plus the final output.
        """
        x = tc.as_tensor(x)
        if x.shape != self.input_shape:
            raise ValidationError(f"input shape {x.shape} != model input {self.input_shape}")
        inj_idx = 0
        for pos, layer in enumerate(self.layers):
            k = layer.kind
            if k is LayerKind.CONV2D:
                x = tc.conv2d_forward(x, layer.weights, layer.bias, layer.stride, layer.padding)
            elif k is LayerKind.CONV3D:
                x = tc.conv3d_forward(x, layer.weights, layer.bias, layer.stride, layer.padding)
            elif k is LayerKind.LINEAR:
                x = tc.linear_forward(x, layer.weights, layer.bias)
            elif k is LayerKind.RELU:
                x = tc.relu(x)
            elif k is LayerKind.MAXPOOL2D:
                x = tc.maxpool2d(x, layer.pool_size, layer.stride)
            elif k is LayerKind.SOFTMAX:
                x = tc.softmax(x)
            elif k is LayerKind.FLATTEN:
                x = np.ascontiguousarray(x.reshape(-1))
            if k in INJECTABLE_KINDS:
                if inject is not None:
                    inject(inj_idx, x)
                if layer.clamp_lo is not None:
                    x = tc.clamp(x, layer.clamp_lo, layer.clamp_hi)
                inj_idx += 1
            if observe is not None:
                view = x.view()
                view.flags.writeable = False
                observe(pos, view)
        return x


def _layer_info(index, layer, out_shape) -> LayerInfo:
    k = layer.kind
    if k is LayerKind.CONV2D:
        neuron = (out_shape[0], 1, out_shape[1], out_shape[2])
        o, i, kh, kw = layer.weights.shape
        weight = (o, i, 1, kh, kw)
    elif k is LayerKind.CONV3D:
        neuron = tuple(out_shape)
        weight = tuple(layer.weights.shape)
    else:  # linear
        neuron = (out_shape[0], 1, 1, 1)
        o, i = layer.weights.shape
        weight = (o, i, 1, 1, 1)
    return LayerInfo(index=index, kind=k, neuron_dims=neuron, weight_dims=weight)


def enumerate_injectable_layers(model, kinds=None, layer_range=None) -> list[LayerInfo]:
    """Filter the model's injectable layers by kind and index range.

    ``layer_range`` is an inclusive [lo, hi] over injectable indices. An
    empty result is a scenario validation error: a fault campaign with no
    eligible layer cannot generate faults.
    """
    infos = model.injectable_infos
    n = len(infos)
    if layer_range is not None:
        lo, hi = layer_range
        if not (0 <= lo <= hi <= n - 1):
            raise ValidationError(
                f"layer_range [{lo}, {hi}] outside valid injectable indices 0..{n - 1}")
        infos = [li for li in infos if lo <= li.index <= hi]
    if kinds is not None:
        kinds = set(kinds)
        infos = [li for li in infos if li.kind in kinds]
    if not infos:
        raise ValidationError(
            f"no injectable layer matches kinds={sorted(k.value for k in kinds or [])} "
            f"layer_range={layer_range}")
    return infos


# ---------------------------------------------------------------------------
# Built-in desk-scale models
# ---------------------------------------------------------------------------

def _seeded_params(model_name, layer_tag, w_shape, seed):
    """Uniform(-s, s) weights and bias with s = 2/sqrt(fan_in).

    Twice the usual Kaiming-style bound: activations then routinely exceed
    magnitude 1, which matters for fault studies (exponent-bit flips on
    values in [1, 2) produce NaN, the classic detected-error signature).
    """
    fan_in = math.prod(w_shape[1:])
    s = 2.0 / math.sqrt(fan_in)
    gen = Xoshiro256StarStar(derive_seed(seed, f"{model_name}/{layer_tag}"))
    n_w = math.prod(w_shape)
    n_b = w_shape[0]
    vals = np.empty(n_w + n_b, dtype=np.float32)
    for i in range(n_w + n_b):
        vals[i] = np.float32(gen.uniform(-s, s))
    return vals[:n_w].reshape(w_shape), vals[n_w:].copy()


def _tiny_cnn(seed):
    """conv2d(3->8,k3,p1) relu maxpool2 conv2d(8->16,k3,p1) relu maxpool2 linear(256->10).

    3962 parameters; input 3x16x16; 10 classes.
    """
    w1, b1 = _seeded_params("tiny-cnn", "conv1", (8, 3, 3, 3), seed)
    w2, b2 = _seeded_params("tiny-cnn", "conv2", (16, 8, 3, 3), seed)
    w3, b3 = _seeded_params("tiny-cnn", "fc", (10, 256), seed)
    return Model(
        "tiny-cnn",
        (3, 16, 16),
        [
            Layer(LayerKind.CONV2D, w1, b1, stride=1, padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.MAXPOOL2D, pool_size=2, stride=2),
            Layer(LayerKind.CONV2D, w2, b2, stride=1, padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.MAXPOOL2D, pool_size=2, stride=2),
            Layer(LayerKind.FLATTEN),
            Layer(LayerKind.LINEAR, w3, b3),
        ],
    )


def _tiny_3d(seed):
    """conv3d(2->4,k2x3x3,p1) relu flatten linear(1280->5); 6553 parameters; input 2x4x8x8."""
    w1, b1 = _seeded_params("tiny-3d", "conv1", (4, 2, 2, 3, 3), seed)
    w2, b2 = _seeded_params("tiny-3d", "fc", (5, 1280), seed)
    return Model(
        "tiny-3d",
        (2, 4, 8, 8),
        [
            Layer(LayerKind.CONV3D, w1, b1, stride=1, padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.FLATTEN),
            Layer(LayerKind.LINEAR, w2, b2),
        ],
    )


def _tiny_det(seed):
    """Two-conv backbone plus a linear head regressing 5 boxes over 4 classes.

    47517 parameters; input 3x32x32; raw output 5*(5+4)=45 values decoded by
    :func:`decode_detections`.
    """
    w1, b1 = _seeded_params("tiny-det", "conv1", (8, 3, 3, 3), seed)
    w2, b2 = _seeded_params("tiny-det", "conv2", (16, 8, 3, 3), seed)
    w3, b3 = _seeded_params("tiny-det", "head", (45, 1024), seed)
    return Model(
        "tiny-det",
        (3, 32, 32),
        [
            Layer(LayerKind.CONV2D, w1, b1, stride=1, padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.MAXPOOL2D, pool_size=2, stride=2),
            Layer(LayerKind.CONV2D, w2, b2, stride=1, padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.MAXPOOL2D, pool_size=2, stride=2),
            Layer(LayerKind.FLATTEN),
            Layer(LayerKind.LINEAR, w3, b3),
        ],
        head="detection",
        num_classes=4,
        num_boxes=5,
    )


_BUILTINS = {"tiny-cnn": _tiny_cnn, "tiny-3d": _tiny_3d, "tiny-det": _tiny_det}


def builtin_models(seed: int = BUILTIN_WEIGHT_SEED) -> dict[str, Model]:
    """Fresh instances of all built-in models."""
    return {name: ctor(seed) for name, ctor in _BUILTINS.items()}


def get_model(name: str, seed: int = BUILTIN_WEIGHT_SEED) -> Model:
    if name not in _BUILTINS:
        raise ValidationError(f"unknown built-in model '{name}'; have {sorted(_BUILTINS)}")
    return _BUILTINS[name](seed)


def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def decode_detections(model: Model, raw) -> list[tuple[float, float, float, float, float, int]]:
    """Decode a detection head's raw vector into (x1, y1, x2, y2, score, class).

    Per box slot: sigmoid-squashed center and size against the input image
    extent (width at least 1 pixel, so x1 < x2 and y1 < y2 on any finite
    raw vector), sigmoid score, argmax class.
    """
    if model.head != "detection":
        raise ValidationError(f"model '{model.name}' has no detection head")
    raw = np.asarray(raw, dtype=np.float32)
    img_h = float(model.input_shape[-2])
    img_w = float(model.input_shape[-1])
    per = 5 + model.num_classes
    boxes = []
    for bi in range(model.num_boxes):
        v = raw[bi * per:(bi + 1) * per]
        cx = _sigmoid(float(v[0])) * img_w
        cy = _sigmoid(float(v[1])) * img_h
        bw = 1.0 + _sigmoid(float(v[2])) * (img_w - 1.0)
        bh = 1.0 + _sigmoid(float(v[3])) * (img_h - 1.0)
        score = _sigmoid(float(v[4]))
        cls = int(np.argmax(v[5:per]))
        boxes.append((cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0, score, cls))
    return boxes


# ---------------------------------------------------------------------------
# ALFM model file format
# ---------------------------------------------------------------------------
#
# magic "ALFM", version u16, then:
#   name (u16 length + utf-8), head u8 (0 classification / 1 detection),
#   num_classes u16, num_boxes u16, input rank u8 + rank x u32,
#   layer count u16, then per layer:
#     kind u8,
#     conv2d:  out/in/kh/kw/stride/padding u32, clamp u8 [+ 2 x f32],
#              weights f32 LE, bias f32 LE
#     conv3d:  out/in/kd/kh/kw/stride/padding u32, clamp, weights, bias
#     linear:  out/in u32, clamp, weights, bias
#     maxpool: k u32, stride u32
#     relu/softmax/flatten: nothing
# All integers little-endian; weights raw float32 little-endian.


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise FileFormatError("truncated model file", offset=self.off)
        vals = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return vals

    def take_bytes(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FileFormatError("truncated model file", offset=self.off)
        out = self.data[self.off:self.off + n]
        self.off += n
        return out


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_model(model: Model, path) -> None:
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<H", MODEL_VERSION)
    out += _pack_str(model.name)
    out += struct.pack("<BHH", 0 if model.head == "classification" else 1,
                       model.num_classes or 0, model.num_boxes)
    out += struct.pack("<B", len(model.input_shape))
    out += struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
    out += struct.pack("<H", len(model.layers))
    for layer in model.layers:
        out += struct.pack("<B", _KIND_CODES[layer.kind])
        k = layer.kind
        if k is LayerKind.CONV2D:
            o, i, kh, kw = layer.weights.shape
            out += struct.pack("<6I", o, i, kh, kw, layer.stride, layer.padding)
        elif k is LayerKind.CONV3D:
            o, i, kd, kh, kw = layer.weights.shape
            out += struct.pack("<7I", o, i, kd, kh, kw, layer.stride, layer.padding)
        elif k is LayerKind.LINEAR:
            o, i = layer.weights.shape
            out += struct.pack("<2I", o, i)
        elif k is LayerKind.MAXPOOL2D:
            out += struct.pack("<2I", layer.pool_size, layer.stride)
        if k in INJECTABLE_KINDS:
            if layer.clamp_lo is not None:
                out += struct.pack("<B2f", 1, layer.clamp_lo, layer.clamp_hi)
            else:
                out += struct.pack("<B", 0)
            out += layer.weights.astype("<f4").tobytes()
            out += layer.bias.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def _read_params(r: _Reader, w_shape):
    (has_clamp,) = r.take("<B")
    clamp_lo = clamp_hi = None
    if has_clamp:
        clamp_lo, clamp_hi = r.take("<2f")
    n_w = math.prod(w_shape)
    w = np.frombuffer(r.take_bytes(4 * n_w), dtype="<f4").reshape(w_shape).copy()
    b = np.frombuffer(r.take_bytes(4 * w_shape[0]), dtype="<f4").copy()
    return w, b, clamp_lo, clamp_hi


def load_model(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take_bytes(4) != MODEL_MAGIC:
        raise FileFormatError("bad magic: not an ALFM model file", offset=0)
    (version,) = r.take("<H")
    if version != MODEL_VERSION:
        raise FileFormatError(f"unsupported model version {version}", offset=4)
    (name_len,) = r.take("<H")
    name = r.take_bytes(name_len).decode("utf-8")
    head_code, num_classes, num_boxes = r.take("<BHH")
    (rank,) = r.take("<B")
    input_shape = r.take(f"<{rank}I")
    (n_layers,) = r.take("<H")
    layers = []
    for _ in range(n_layers):
        (code,) = r.take("<B")
        if code not in _CODE_KINDS:
            raise FileFormatError(f"unknown layer kind code {code}", offset=r.off - 1)
        kind = _CODE_KINDS[code]
        if kind is LayerKind.CONV2D:
            o, i, kh, kw, stride, padding = r.take("<6I")
            w, b, lo, hi = _read_params(r, (o, i, kh, kw))
            layers.append(Layer(kind, w, b, stride=stride, padding=padding,
                                clamp_lo=lo, clamp_hi=hi))
        elif kind is LayerKind.CONV3D:
            o, i, kd, kh, kw, stride, padding = r.take("<7I")
            w, b, lo, hi = _read_params(r, (o, i, kd, kh, kw))
            layers.append(Layer(kind, w, b, stride=stride, padding=padding,
                                clamp_lo=lo, clamp_hi=hi))
        elif kind is LayerKind.LINEAR:
            o, i = r.take("<2I")
            w, b, lo, hi = _read_params(r, (o, i))
            layers.append(Layer(kind, w, b, clamp_lo=lo, clamp_hi=hi))
        elif kind is LayerKind.MAXPOOL2D:
            k, stride = r.take("<2I")
            layers.append(Layer(kind, pool_size=k, stride=stride))
        else:
            layers.append(Layer(kind))
    if r.off != len(data):
        raise FileFormatError(f"{len(data) - r.off} trailing bytes after model", offset=r.off)
    head = "classification" if head_code == 0 else "detection"
    return Model(name, input_shape, layers, head=head,
                 num_classes=num_classes or None, num_boxes=num_boxes)


def resolve_model(spec: str, seed: int = BUILTIN_WEIGHT_SEED) -> Model:
    """Accept a built-in model name or a path to an ALFM file."""
    if spec in _BUILTINS:
        return _BUILTINS[spec](seed)
    return load_model(spec)
