"""Turning fault records into corrupted executions.

Bit convention: bit 0 is the least-significant mantissa bit, bits 23..30
are the exponent, bit 31 is the sign. All bit manipulation happens on
uint32 views of the float32 storage, never through a float64 round trip,
so NaN payloads (including signaling NaNs produced by exponent flips)
survive bit-exactly.

Neuron faults are applied to a layer's output after bias addition and
before the activation / range clamp, i.e. at the post-MAC value. Weight
faults mutate copy-on-write parameter copies; the base model's arrays are
never touched, which makes the transient-restore contract structural
rather than procedural.

Fault persistence: transient weight faults live exactly as long as their
injection-policy scope (image, batch or epoch); permanent ones accumulate
across scopes and are cleared when the iterator advances to a new epoch.
Neuron faults are per-inference events by nature, so persistence does not
apply to them; under per-batch/per-epoch policies the active group is
re-injected into every batch of its scope, at the in-batch image position
given by each record's batch row.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import FaultLocationError, FaultsExhausted, ValidationError
from .fault_gen import FaultMatrix, FaultRecord, NeuronFault, WeightFault
from .model_registry import Model
from .scenario import (
    FaultPersistence,
    InjectionTarget,
    InjPolicy,
    RndMode,
    ScenarioConfig,
    num_faults_required,
    scenario_hash,
)


class FlipDirection(Enum):
    ZERO_TO_ONE = "0to1"
    ONE_TO_ZERO = "1to0"
    NOT_APPLICABLE = "na"


def f32_bits(x) -> int:
    """The uint32 bit pattern of a float32 value (exact, payload-preserving)."""
    return int(np.frombuffer(np.float32(x).tobytes(), dtype="<u4")[0])


def f32_from_bits(bits: int) -> np.float32:
    """The float32 value whose pattern is ``bits`` (exact, payload-preserving)."""
    return np.frombuffer(struct.pack("<I", bits & 0xFFFFFFFF), dtype="<f4")[0]


def flip_bit(x, bit: int) -> tuple[np.float32, FlipDirection]:
    """Flip one bit of a float32 value; returns the result and the flip direction."""
    if not 0 <= bit <= 31:
        raise ValidationError(f"bit index must be 0..31, got {bit}")
    bits = f32_bits(x)
    direction = FlipDirection.ONE_TO_ZERO if (bits >> bit) & 1 else FlipDirection.ZERO_TO_ONE
    return f32_from_bits(bits ^ (1 << bit)), direction


@dataclass(frozen=True)
class InjectionEvent:
    """One applied fault: where, what it read, what it wrote."""

    column: int
    fault: FaultRecord
    original_bits: int
    corrupted_bits: int
    direction: FlipDirection

    @property
    def original_value(self) -> np.float32:
        return f32_from_bits(self.original_bits)

    @property
    def corrupted_value(self) -> np.float32:
        return f32_from_bits(self.corrupted_bits)


def _corrupt_element(arr: np.ndarray, idx: tuple[int, ...], value: float,
                     rnd_mode: RndMode) -> tuple[int, int, FlipDirection]:
    """Corrupt arr[idx] in place; returns (original_bits, corrupted_bits, direction)."""
    view = arr.view(np.uint32)
    original = int(view[idx])
    if rnd_mode is RndMode.BITFLIP:
        bit = int(value)
        direction = FlipDirection.ONE_TO_ZERO if (original >> bit) & 1 else FlipDirection.ZERO_TO_ONE
        corrupted = original ^ (1 << bit)
    else:
        direction = FlipDirection.NOT_APPLICABLE
        corrupted = f32_bits(value)
    view[idx] = corrupted
    return original, corrupted, direction


def _neuron_index(rec: NeuronFault, shape: tuple[int, ...], column: int) -> tuple[int, ...]:
    if len(shape) == 1:
        idx = (rec.channel,)
    elif len(shape) == 3:
        idx = (rec.channel, rec.height, rec.width)
    elif len(shape) == 4:
        idx = (rec.channel, rec.depth, rec.height, rec.width)
    else:
        raise FaultLocationError(f"column {column}: unsupported activation rank {len(shape)}")
    for coord, dim in zip(idx, shape):
        if not 0 <= coord < dim:
            raise FaultLocationError(
                f"column {column}: neuron coordinate {idx} outside layer output {shape}")
    return idx


def _weight_index(rec: WeightFault, shape: tuple[int, ...], column: int) -> tuple[int, ...]:
    if len(shape) == 2:
        idx = (rec.out_ch, rec.in_ch)
    elif len(shape) == 4:
        idx = (rec.out_ch, rec.in_ch, rec.k_h, rec.k_w)
    elif len(shape) == 5:
        idx = (rec.out_ch, rec.in_ch, rec.k_depth, rec.k_h, rec.k_w)
    else:
        raise FaultLocationError(f"column {column}: unsupported weight rank {len(shape)}")
    for coord, dim in zip(idx, shape):
        if not 0 <= coord < dim:
            raise FaultLocationError(
                f"column {column}: weight coordinate {idx} outside weights {shape}")
    return idx


def apply_neuron_faults(out: np.ndarray, faults, rnd_mode: RndMode = RndMode.BITFLIP,
                        columns=None) -> list[InjectionEvent]:
    """Corrupt a single layer-output tensor in place.

    ``faults`` are records addressing this layer; ``columns`` optionally
    carries their fault-matrix column ids for the event log.
    """
    if columns is None:
        columns = range(len(faults))
    events = []
    for column, rec in zip(columns, faults):
        idx = _neuron_index(rec, out.shape, column)
        orig, corr, direction = _corrupt_element(out, idx, rec.value, rnd_mode)
        events.append(InjectionEvent(column, rec, orig, corr, direction))
    return events


def apply_weight_faults(model: Model, faults, persistence=FaultPersistence.TRANSIENT,
                        rnd_mode: RndMode = RndMode.BITFLIP, columns=None) -> "CorruptedModel":
    """Build a corrupted copy-on-write variant of ``model``.

    Only the layers named by ``faults`` get copied weight arrays; the base
    model's parameters are never modified, so dropping the variant restores
    the baseline bit-exactly.
    """
    if columns is None:
        columns = range(len(faults))
    group = list(zip(columns, faults))
    cm = CorruptedModel(model, group, InjectionTarget.WEIGHTS, rnd_mode, persistence)
    return cm


class CorruptedModel:
    """The base model plus one active fault group.

    For weight targets the mutated copy-on-write model is built eagerly and
    ``weight_events`` records the mutations. For neuron targets the faults
    are injected during :meth:`forward` into the image whose in-batch
    position matches each record's batch row.
    """

    def __init__(self, source: Model, group, target: InjectionTarget,
                 rnd_mode: RndMode, persistence: FaultPersistence,
                 weight_state: dict[int, np.ndarray] | None = None):
        self.source = source
        self.group = list(group)
        self.target = target
        self.rnd_mode = rnd_mode
        self.persistence = persistence
        self.weight_events: list[InjectionEvent] = []
        if target is InjectionTarget.WEIGHTS:
            overlay = dict(weight_state or {})
            for column, rec in self.group:
                if rec.layer >= len(source.injectable_infos) or rec.layer < 0:
                    raise FaultLocationError(
                        f"column {column}: layer index {rec.layer} outside model "
                        f"with {len(source.injectable_infos)} injectable layers")
                if rec.layer not in overlay:
                    overlay[rec.layer] = source.injectable_layer(rec.layer).weights.copy()
                w = overlay[rec.layer]
                idx = _weight_index(rec, w.shape, column)
                orig, corr, direction = _corrupt_element(w, idx, rec.value, self.rnd_mode)
                self.weight_events.append(InjectionEvent(column, rec, orig, corr, direction))
            self._overlay = overlay
            self.model = source.with_weight_overrides(overlay) if overlay else source
        else:
            self._overlay = {}
            self.model = source

    def forward(self, x, batch_pos: int = 0, observe=None):
        """Run one corrupted inference; returns (output, neuron injection events)."""
        events: list[InjectionEvent] = []
        inject = None
        if self.target is InjectionTarget.NEURONS and self.group:
            n_layers = len(self.source.injectable_infos)

            def inject(inj_idx, out):
                for column, rec in self.group:
                    if rec.batch != batch_pos:
                        continue
                    if rec.layer >= n_layers or rec.layer < 0:
                        raise FaultLocationError(
                            f"column {column}: layer index {rec.layer} outside model "
                            f"with {n_layers} injectable layers")
                    if rec.layer != inj_idx:
                        continue
                    idx = _neuron_index(rec, out.shape, column)
                    orig, corr, direction = _corrupt_element(out, idx, rec.value, self.rnd_mode)
                    events.append(InjectionEvent(column, rec, orig, corr, direction))

        out = self.model.forward(x, inject=inject, observe=observe)
        return out, events

    def restore(self) -> None:
        """Detach the corrupted weights; the model reverts to the base parameters."""
        self._overlay = {}
        self.model = self.source


class FaultIterator:
    """Hands out one CorruptedModel per injection-policy scope.

    Groups of ``max_faults_per_image`` columns are consumed strictly in
    column order: one group per image (per_image), per batch (per_batch)
    or per epoch (per_epoch). Under permanent persistence, weight faults
    accumulate within an epoch and are dropped when the iterator crosses
    an epoch boundary. Raises :class:`FaultsExhausted` when no full group
    is left.
    """

    def __init__(self, model: Model, matrix: FaultMatrix, cfg: ScenarioConfig):
        cfg.validate()
        if matrix.scenario_hash != scenario_hash(cfg):
            raise ValidationError(
                "fault matrix does not match the scenario (scenario_hash differs); "
                "regenerate the matrix or load the matching scenario file")
        if matrix.target is not cfg.injection_target:
            raise ValidationError(
                f"fault matrix target {matrix.target.value} != scenario "
                f"injection_target {cfg.injection_target.value}")
        if len(matrix) != num_faults_required(cfg):
            raise ValidationError(
                f"fault matrix has {len(matrix)} columns, scenario requires "
                f"{num_faults_required(cfg)}")
        self.model = model
        self.matrix = matrix
        self.cfg = cfg
        self._c = cfg.max_faults_per_image
        self._group_idx = 0
        if cfg.inj_policy is InjPolicy.PER_IMAGE:
            self._groups_per_epoch = cfg.dataset_size
        elif cfg.inj_policy is InjPolicy.PER_BATCH:
            self._groups_per_epoch = math.ceil(cfg.dataset_size / cfg.batch_size)
        else:
            self._groups_per_epoch = 1
        # one scope per group; under per_batch/per_epoch the trailing matrix
        # columns stay unused (the matrix is always sized n = a*b*c)
        self._n_groups = min(len(matrix) // self._c,
                             cfg.num_runs * self._groups_per_epoch)
        self._epoch = 0
        self._weight_state: dict[int, np.ndarray] = {}

    def __iter__(self):
        return self

    def __next__(self) -> CorruptedModel:
        if self._group_idx >= self._n_groups:
            raise FaultsExhausted(
                f"fault matrix exhausted after {self._n_groups} groups of {self._c}")
        epoch = self._group_idx // self._groups_per_epoch
        if epoch != self._epoch:
            self._epoch = epoch
            self._weight_state = {}
        start = self._group_idx * self._c
        group = [(start + k, self.matrix.columns[start + k]) for k in range(self._c)]
        self._group_idx += 1
        if self.matrix.target is InjectionTarget.WEIGHTS:
            state = None
            if self.cfg.fault_persistence is FaultPersistence.PERMANENT:
                state = {i: w.copy() for i, w in self._weight_state.items()}
            cm = CorruptedModel(self.model, group, self.matrix.target,
                                self.cfg.rnd_mode, self.cfg.fault_persistence,
                                weight_state=state)
            if self.cfg.fault_persistence is FaultPersistence.PERMANENT:
                self._weight_state = cm._overlay
            return cm
        return CorruptedModel(self.model, group, self.matrix.target,
                              self.cfg.rnd_mode, self.cfg.fault_persistence)


def make_fault_iterator(model: Model, matrix: FaultMatrix, cfg: ScenarioConfig) -> FaultIterator:
    return FaultIterator(model, matrix, cfg)
