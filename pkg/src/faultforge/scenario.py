"""Campaign configuration: parsing, validation, persistence, hashing.

The scenario file is YAML with the campaign's parameter names as keys::

    dataset_size: 100          # images per epoch (a)
    num_runs: 2                # epochs (b)
    max_faults_per_image: 3    # concurrent faults per image (c)
    injection_target: neurons  # or: weights (never both in one run)
    rnd_mode: bitflip          # or: random_value
    rnd_bit_range: [0, 31]     # bitflip only; bit 0 = mantissa LSB, 31 = sign
    value_range: [-1.0, 1.0]   # random_value only
    layer_types: [conv2d, conv3d, linear]
    layer_range: [0, 2]        # optional inclusive injectable-index range
    layer_weighting: size_proportional   # or: uniform
    inj_policy: per_image      # or: per_batch, per_epoch
    fault_persistence: transient         # or: permanent
    batch_size: 1
    seed: 12345

Required keys: dataset_size, num_runs, max_faults_per_image,
injection_target, rnd_mode, plus the range matching rnd_mode. Everything
else takes the defaults shown by :func:`save_scenario`. Unknown keys are
rejected. The environment variable FAULTFORGE_SEED, when set, overrides the
file's seed (an explicit CLI --seed overrides both).
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, replace
from enum import Enum

import yaml

from .errors import ValidationError
from .tensor_core import INJECTABLE_KINDS, LayerKind

SEED_ENV_VAR = "FAULTFORGE_SEED"
OUT_ENV_VAR = "FAULTFORGE_OUT"


class InjectionTarget(Enum):
    NEURONS = "neurons"
    WEIGHTS = "weights"


class RndMode(Enum):
    BITFLIP = "bitflip"
    RANDOM_VALUE = "random_value"


class LayerWeighting(Enum):
    UNIFORM = "uniform"
    SIZE_PROPORTIONAL = "size_proportional"


class InjPolicy(Enum):
    PER_IMAGE = "per_image"
    PER_BATCH = "per_batch"
    PER_EPOCH = "per_epoch"


class FaultPersistence(Enum):
    TRANSIENT = "transient"
    PERMANENT = "permanent"


_LAYER_TYPE_NAMES = {
    "conv2d": LayerKind.CONV2D,
    "conv3d": LayerKind.CONV3D,
    "linear": LayerKind.LINEAR,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of one fault-injection campaign; immutable value object."""

    dataset_size: int
    num_runs: int
    max_faults_per_image: int
    injection_target: InjectionTarget
    rnd_mode: RndMode
    rnd_bit_range: tuple[int, int] | None = None
    value_range: tuple[float, float] | None = None
    layer_types: frozenset[LayerKind] = frozenset(INJECTABLE_KINDS)
    layer_range: tuple[int, int] | None = None
    layer_weighting: LayerWeighting = LayerWeighting.SIZE_PROPORTIONAL
    inj_policy: InjPolicy = InjPolicy.PER_IMAGE
    fault_persistence: FaultPersistence = FaultPersistence.TRANSIENT
    batch_size: int = 1
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        for key in ("dataset_size", "num_runs", "max_faults_per_image", "batch_size"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"{key} must be a positive integer, got {v!r}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")
        if self.rnd_mode is RndMode.BITFLIP:
            if self.rnd_bit_range is None:
                raise ValidationError("rnd_mode bitflip requires rnd_bit_range")
            lo, hi = self.rnd_bit_range
            if not (0 <= lo <= hi <= 31):
                raise ValidationError(f"rnd_bit_range must satisfy 0 <= lo <= hi <= 31, got [{lo}, {hi}]")
        else:
            if self.value_range is None:
                raise ValidationError("rnd_mode random_value requires value_range")
            lo, hi = self.value_range
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValidationError(f"value_range must be finite with lo <= hi, got [{lo}, {hi}]")
        if not self.layer_types:
            raise ValidationError("layer_types must name at least one injectable kind")
        if self.layer_range is not None:
            lo, hi = self.layer_range
            if lo < 0 or lo > hi:
                raise ValidationError(f"layer_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")
        return self


def num_faults_required(cfg: ScenarioConfig) -> int:
    """Total pre-generated faults: dataset_size * num_runs * max_faults_per_image."""
    return cfg.dataset_size * cfg.num_runs * cfg.max_faults_per_image


_REQUIRED = ("dataset_size", "num_runs", "max_faults_per_image", "injection_target", "rnd_mode")
_KNOWN = _REQUIRED + (
    "rnd_bit_range", "value_range", "layer_types", "layer_range", "layer_weighting",
    "inj_policy", "fault_persistence", "batch_size", "seed",
)


def _enum_from(value, enum_cls, key):
    try:
        return enum_cls(str(value))
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ValidationError(f"{key}: unknown value {value!r} (valid: {valid})") from None


def _pair(value, key, cast):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValidationError(f"{key} must be a two-element list, got {value!r}")
    return (cast(value[0]), cast(value[1]))


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    unknown = set(raw) - set(_KNOWN)
    if unknown:
        raise ValidationError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ValidationError(f"missing required scenario key(s): {', '.join(missing)}")

    kwargs = {
        "dataset_size": raw["dataset_size"],
        "num_runs": raw["num_runs"],
        "max_faults_per_image": raw["max_faults_per_image"],
        "injection_target": _enum_from(raw["injection_target"], InjectionTarget, "injection_target"),
        "rnd_mode": _enum_from(raw["rnd_mode"], RndMode, "rnd_mode"),
    }
    if "rnd_bit_range" in raw:
        kwargs["rnd_bit_range"] = _pair(raw["rnd_bit_range"], "rnd_bit_range", int)
    if "value_range" in raw:
        kwargs["value_range"] = _pair(raw["value_range"], "value_range", float)
    if "layer_types" in raw:
        names = raw["layer_types"]
        if not isinstance(names, (list, tuple)):
            raise ValidationError(f"layer_types must be a list, got {names!r}")
        kinds = set()
        for n in names:
            if n not in _LAYER_TYPE_NAMES:
                raise ValidationError(
                    f"layer_types: unknown type {n!r} (valid: {', '.join(sorted(_LAYER_TYPE_NAMES))})")
            kinds.add(_LAYER_TYPE_NAMES[n])
        kwargs["layer_types"] = frozenset(kinds)
    if raw.get("layer_range") is not None:
        kwargs["layer_range"] = _pair(raw["layer_range"], "layer_range", int)
    if "layer_weighting" in raw:
        kwargs["layer_weighting"] = _enum_from(raw["layer_weighting"], LayerWeighting, "layer_weighting")
    if "inj_policy" in raw:
        kwargs["inj_policy"] = _enum_from(raw["inj_policy"], InjPolicy, "inj_policy")
    if "fault_persistence" in raw:
        kwargs["fault_persistence"] = _enum_from(raw["fault_persistence"], FaultPersistence,
                                                 "fault_persistence")
    if "batch_size" in raw:
        kwargs["batch_size"] = raw["batch_size"]
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    return ScenarioConfig(**kwargs).validate()


def parse_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file; applies the FAULTFORGE_SEED override."""
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ValidationError(f"scenario file {path} does not contain a key-value mapping")
    cfg = scenario_from_dict(raw)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed, 0))
        except ValueError:
            raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
        cfg.validate()
    return cfg


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = {
        "dataset_size": cfg.dataset_size,
        "num_runs": cfg.num_runs,
        "max_faults_per_image": cfg.max_faults_per_image,
        "injection_target": cfg.injection_target.value,
        "rnd_mode": cfg.rnd_mode.value,
        "layer_types": sorted(k.value for k in cfg.layer_types),
        "layer_range": list(cfg.layer_range) if cfg.layer_range is not None else None,
        "layer_weighting": cfg.layer_weighting.value,
        "inj_policy": cfg.inj_policy.value,
        "fault_persistence": cfg.fault_persistence.value,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
    }
    if cfg.rnd_bit_range is not None:
        d["rnd_bit_range"] = list(cfg.rnd_bit_range)
    if cfg.value_range is not None:
        d["value_range"] = list(cfg.value_range)
    return d


def save_scenario(cfg: ScenarioConfig, path) -> None:
    """Persist a resolved config; parse_scenario(save_scenario(cfg)) == cfg."""
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scenario_to_dict(cfg), f, sort_keys=True, default_flow_style=None)


def scenario_hash(cfg: ScenarioConfig) -> int:
    """64-bit digest binding fault matrices to the exact generating config."""
    canon = yaml.safe_dump(scenario_to_dict(cfg), sort_keys=True)
    return int.from_bytes(hashlib.blake2b(canon.encode(), digest_size=8).digest(), "little")
