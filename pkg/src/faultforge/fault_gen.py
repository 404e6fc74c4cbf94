"""Pre-generation of the complete fault matrix and its binary persistence.

All faults of a campaign are generated before any inference runs. The
matrix is conceptually 7 rows by n columns, one fault per column, where
n = dataset_size * num_runs * max_faults_per_image. Neuron-target rows are
(batch, layer, channel, depth, height, width, value); weight-target rows
are (layer, out_ch, in_ch, k_depth, k_h, k_w, value). ``depth``/``k_depth``
are -1 except for conv3d layers; linear weight faults address (out, in)
and carry k_h = k_w = 0.

Sampling is driven by a single xoshiro256** stream seeded once; nothing
after generation draws randomness, so a (model, config, seed) triple fully
determines the matrix. Columns are grouped per image: consecutive runs of
``max_faults_per_image`` columns belong to one image (epoch-major image
order), and within such a group fault locations are pairwise distinct
(collisions are resampled). The batch row of a neuron fault is the image's
index within its batch.

Per column the draw order is: layer (one uniform draw against the
cumulative layer weights), then the coordinates (one bounded draw per
addressed dimension, in row order), then the value (bit index or float32),
drawn only once the location is accepted.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

from .errors import FileFormatError, ValidationError
from .model_registry import enumerate_injectable_layers
from .prng import Xoshiro256StarStar
from .scenario import InjectionTarget, LayerWeighting, RndMode, ScenarioConfig
from .scenario import num_faults_required, scenario_hash
from .tensor_core import LayerKind

FAULT_MAGIC = b"ALFF"
FAULT_VERSION = 1
_MATRIX_ROWS = 7
_MAX_RESAMPLES = 10_000


@dataclass(frozen=True)
class NeuronFault:
    """One activation corruption site; ``value`` is a bit index (as an
    integral float) in bitflip mode or the replacement value otherwise."""

    batch: int
    layer: int
    channel: int
    depth: int
    height: int
    width: int
    value: float

    def coords(self) -> tuple[int, ...]:
        return (self.batch, self.layer, self.channel, self.depth, self.height, self.width)

    def location(self) -> tuple[int, ...]:
        return (self.layer, self.channel, self.depth, self.height, self.width)


@dataclass(frozen=True)
class WeightFault:
    """One stored-parameter corruption site (no batch row: weights exist
    independently of any image)."""

    layer: int
    out_ch: int
    in_ch: int
    k_depth: int
    k_h: int
    k_w: int
    value: float

    def coords(self) -> tuple[int, ...]:
        return (self.layer, self.out_ch, self.in_ch, self.k_depth, self.k_h, self.k_w)

    def location(self) -> tuple[int, ...]:
        return self.coords()


FaultRecord = NeuronFault | WeightFault


@dataclass(frozen=True)
class FaultMatrix:
    target: InjectionTarget
    columns: tuple[FaultRecord, ...]
    seed: int
    scenario_hash: int

    def __len__(self) -> int:
        return len(self.columns)


def layer_selection_weights(layers, target: InjectionTarget) -> list[float]:
    """Size-proportional selection probability per layer.

    Each layer's factor is its element count (neurons or weights, per
    target) divided by the total element count over all eligible layers.
    """
    if not layers:
        raise ValidationError("cannot weight an empty layer sequence")
    if target is InjectionTarget.NEURONS:
        counts = [li.element_count_neurons for li in layers]
    else:
        counts = [li.element_count_weights for li in layers]
    total = float(sum(counts))
    return [c / total for c in counts]


def _sample_value(gen: Xoshiro256StarStar, cfg: ScenarioConfig) -> float:
    if cfg.rnd_mode is RndMode.BITFLIP:
        lo, hi = cfg.rnd_bit_range
        return float(lo + gen.randint_below(hi - lo + 1))
    lo, hi = cfg.value_range
    return float(np.float32(gen.uniform(lo, hi)))


def generate_fault_matrix(model, cfg: ScenarioConfig, seed: int) -> FaultMatrix:
    """Draw the full n-column fault matrix for (model, cfg, seed)."""
    cfg.validate()
    layers = enumerate_injectable_layers(model, cfg.layer_types, cfg.layer_range)
    if cfg.layer_weighting is LayerWeighting.SIZE_PROPORTIONAL:
        weights = layer_selection_weights(layers, cfg.injection_target)
    else:
        weights = [1.0 / len(layers)] * len(layers)
    cum = list(accumulate(weights))
    cum[-1] = 1.0  # guard against float drift at the top end

    gen = Xoshiro256StarStar(seed)
    a, c = cfg.dataset_size, cfg.max_faults_per_image
    n = num_faults_required(cfg)
    neurons = cfg.injection_target is InjectionTarget.NEURONS

    columns: list[FaultRecord] = []
    group_locations: set[tuple[int, ...]] = set()
    for j in range(n):
        if j % c == 0:
            group_locations.clear()
        image_ordinal = j // c
        batch_row = (image_ordinal % a) % cfg.batch_size
        for attempt in range(_MAX_RESAMPLES):
            li = layers[bisect_right(cum, gen.random())]
            if neurons:
                ch_n, d_n, h_n, w_n = li.neuron_dims
                channel = gen.randint_below(ch_n)
                depth = gen.randint_below(d_n) if li.kind is LayerKind.CONV3D else -1
                height = gen.randint_below(h_n)
                width = gen.randint_below(w_n)
                location = (li.index, channel, depth, height, width)
            else:
                o_n, i_n, kd_n, kh_n, kw_n = li.weight_dims
                out_ch = gen.randint_below(o_n)
                in_ch = gen.randint_below(i_n)
                k_depth = gen.randint_below(kd_n) if li.kind is LayerKind.CONV3D else -1
                k_h = gen.randint_below(kh_n)
                k_w = gen.randint_below(kw_n)
                location = (li.index, out_ch, in_ch, k_depth, k_h, k_w)
            if location not in group_locations:
                break
        else:
            raise ValidationError(
                f"could not draw {c} distinct fault locations for one image "
                f"(column {j}); the eligible layers are too small")
        group_locations.add(location)
        value = _sample_value(gen, cfg)
        if neurons:
            columns.append(NeuronFault(batch_row, *location, value))
        else:
            columns.append(WeightFault(*location, value))

    return FaultMatrix(
        target=cfg.injection_target,
        columns=tuple(columns),
        seed=seed,
        scenario_hash=scenario_hash(cfg),
    )


# ---------------------------------------------------------------------------
# ALFF binary format
# ---------------------------------------------------------------------------
#
# magic "ALFF"
# version u16 = 1
# target  u8 (0 neuron / 1 weight)
# rows    u8 = 7
# cols    u64
# seed    u64
# scenario_hash u64
# cols records of 6 x i64 coordinates + 1 x f64 value, column-major
# crc32   u32 over everything after the magic
#
# Bit indices are stored as integral f64 values. All integers little-endian.

_HEADER = struct.Struct("<HBBQQQ")
_COLUMN = struct.Struct("<6qd")


def save_fault_matrix(matrix: FaultMatrix, path) -> None:
    body = bytearray()
    body += _HEADER.pack(
        FAULT_VERSION,
        0 if matrix.target is InjectionTarget.NEURONS else 1,
        _MATRIX_ROWS,
        len(matrix.columns),
        matrix.seed,
        matrix.scenario_hash,
    )
    for rec in matrix.columns:
        body += _COLUMN.pack(*rec.coords(), rec.value)
    with open(path, "wb") as f:
        f.write(FAULT_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(bytes(body))))


def load_fault_matrix(path) -> FaultMatrix:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != FAULT_MAGIC:
        raise FileFormatError("bad magic: not an ALFF fault file", offset=0)
    if len(data) < 4 + _HEADER.size + 4:
        raise FileFormatError("truncated fault file header", offset=len(data))
    body, crc_raw = data[4:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", crc_raw)
    if zlib.crc32(body) != stored_crc:
        raise FileFormatError("checksum mismatch: fault file corrupted", offset=len(data) - 4)
    version, target_code, rows, cols, seed, sc_hash = _HEADER.unpack_from(body, 0)
    if version != FAULT_VERSION:
        raise FileFormatError(f"unsupported fault file version {version}", offset=4)
    if rows != _MATRIX_ROWS:
        raise FileFormatError(f"unexpected row count {rows}", offset=7)
    expected = _HEADER.size + cols * _COLUMN.size
    if len(body) != expected:
        raise FileFormatError(
            f"fault file length {len(body)} != expected {expected} for {cols} columns",
            offset=len(data))
    target = InjectionTarget.NEURONS if target_code == 0 else InjectionTarget.WEIGHTS
    columns = []
    off = _HEADER.size
    for _ in range(cols):
        *coords, value = _COLUMN.unpack_from(body, off)
        off += _COLUMN.size
        if target is InjectionTarget.NEURONS:
            columns.append(NeuronFault(*coords, value))
        else:
            columns.append(WeightFault(*coords, value))
    return FaultMatrix(target=target, columns=tuple(columns), seed=seed, scenario_hash=sc_hash)
