"""Campaign orchestration: lockstep fault-free / faulty / mitigated runs.

A campaign walks the data set for ``num_runs`` epochs. Per image all legs
consume the identical input tensor: the fault-free leg is a pure function
of (model, input); the corrupted leg applies the active fault group from
the pre-generated matrix; the optional mitigated leg injects the identical
group into the clipper-hardened model so the comparison isolates the
mitigation. Execution may fan out over worker threads, but results are
merged in deterministic order, so output files are identical for any
thread count.

Output directory layout::

    meta/     scenario.yml   resolved campaign parameters
              dataset.json   ground truth + reconstruction descriptor
              model.txt      model identity and weights hash
    faults/   campaign.alff  the fault matrix actually used
              campaign.alfr  the runset (one record per applied fault)
    results/  orig.csv|json  corr.csv|json  resil.csv|json

Runset file format ("ALFR"): magic, version u16, record count u64, then
fixed 64-byte little-endian records (epoch u32, batch u32, image_id u32,
fault_column u32, six i32 fault coordinates, fault value f64, original and
corrupted float32 bit patterns as u32, flip direction u8, nan u8, inf u8,
5 pad bytes), closed by a CRC32 over everything after the magic. Records
are sorted by (epoch, batch_index, image_id, fault_column).
"""

from __future__ import annotations

import json
import shutil
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetHandle, batches, export_ground_truth_json
from .errors import FileFormatError, ReplayMismatchError, ValidationError
from .evaluation import top_k
from .fault_gen import (
    FaultMatrix,
    FaultRecord,
    NeuronFault,
    WeightFault,
    generate_fault_matrix,
    load_fault_matrix,
    save_fault_matrix,
)
from .injector import FlipDirection, f32_from_bits, make_fault_iterator
from .model_registry import Model, decode_detections
from .scenario import (
    InjectionTarget,
    InjPolicy,
    RndMode,
    ScenarioConfig,
    save_scenario,
    scenario_hash,
)

RUNSET_MAGIC = b"ALFR"
RUNSET_VERSION = 1
_RUNSET_RECORD = struct.Struct("<IIII6idIIBBB5x")

_DIR_CODES = {FlipDirection.NOT_APPLICABLE: 0, FlipDirection.ZERO_TO_ONE: 1,
              FlipDirection.ONE_TO_ZERO: 2}
_CODE_DIRS = {v: k for k, v in _DIR_CODES.items()}


def detect_nan_inf(tensor) -> tuple[bool, bool]:
    """(contains NaN, contains +/-Inf) for any float tensor."""
    t = np.asarray(tensor)
    return bool(np.isnan(t).any()), bool(np.isinf(t).any())


@dataclass(frozen=True)
class RunsetRecord:
    """One applied fault with its observed effect."""

    epoch: int
    batch_index: int
    image_id: int
    fault_column: int
    location: FaultRecord
    original_bits: int
    corrupted_bits: int
    flip_direction: FlipDirection
    nan_detected: bool
    inf_detected: bool

    @property
    def original_value(self) -> np.float32:
        return f32_from_bits(self.original_bits)

    @property
    def corrupted_value(self) -> np.float32:
        return f32_from_bits(self.corrupted_bits)


def write_runset(records, path) -> None:
    body = bytearray()
    body += struct.pack("<H", RUNSET_VERSION)
    body += struct.pack("<Q", len(records))
    for r in records:
        body += _RUNSET_RECORD.pack(
            r.epoch, r.batch_index, r.image_id, r.fault_column,
            *r.location.coords(), r.location.value,
            r.original_bits, r.corrupted_bits,
            _DIR_CODES[r.flip_direction],
            1 if r.nan_detected else 0,
            1 if r.inf_detected else 0,
        )
    with open(path, "wb") as f:
        f.write(RUNSET_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(bytes(body))))


def load_runset(path, target: InjectionTarget, strict: bool = True):
    """Read an ALFR file; returns (records, crc_ok).

    ``strict=False`` tolerates a checksum mismatch (replay wants to diff the
    contents of a tampered file instead of refusing to read it).
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != RUNSET_MAGIC:
        raise FileFormatError("bad magic: not an ALFR runset file", offset=0)
    if len(data) < 4 + 10 + 4:
        raise FileFormatError("truncated runset header", offset=len(data))
    body, crc_raw = data[4:-4], data[-4:]
    crc_ok = zlib.crc32(body) == struct.unpack("<I", crc_raw)[0]
    if strict and not crc_ok:
        raise FileFormatError("checksum mismatch: runset corrupted", offset=len(data) - 4)
    (version,) = struct.unpack_from("<H", body, 0)
    if version != RUNSET_VERSION:
        raise FileFormatError(f"unsupported runset version {version}", offset=4)
    (count,) = struct.unpack_from("<Q", body, 2)
    expected = 10 + count * _RUNSET_RECORD.size
    if len(body) != expected:
        raise FileFormatError(
            f"runset length {len(body)} != expected {expected} for {count} records",
            offset=len(data))
    records = []
    off = 10
    for _ in range(count):
        (epoch, batch_index, image_id, column, c0, c1, c2, c3, c4, c5, value,
         orig_bits, corr_bits, dir_code, nan_f, inf_f) = _RUNSET_RECORD.unpack_from(body, off)
        off += _RUNSET_RECORD.size
        if target is InjectionTarget.NEURONS:
            loc = NeuronFault(c0, c1, c2, c3, c4, c5, value)
        else:
            loc = WeightFault(c0, c1, c2, c3, c4, c5, value)
        records.append(RunsetRecord(epoch, batch_index, image_id, column, loc,
                                    orig_bits, corr_bits, _CODE_DIRS[dir_code],
                                    bool(nan_f), bool(inf_f)))
    return records, crc_ok


# ---------------------------------------------------------------------------
# range profiling and clipper hardening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RangeProfile:
    """Fault-free (min, max) of every injectable layer's post-MAC output."""

    bounds: tuple[tuple[float, float], ...]


def profile_ranges(model: Model, ds: DatasetHandle) -> RangeProfile:
    """Exact running min/max per injectable layer over a fault-free pass."""
    n = len(model.injectable_infos)
    mins = [np.inf] * n
    maxs = [-np.inf] * n

    def observe(inj_idx, out):
        lo = float(out.min())
        hi = float(out.max())
        if lo < mins[inj_idx]:
            mins[inj_idx] = lo
        if hi > maxs[inj_idx]:
            maxs[inj_idx] = hi

    for sample in ds:
        model.forward(sample.image, inject=observe)
    return RangeProfile(bounds=tuple(zip(mins, maxs)))


def harden_with_clipper(model: Model, profile: RangeProfile) -> Model:
    """Clamp every injectable layer's output to its profiled [min, max].

    The clamp sits after the injection point and before the activation, so
    out-of-range corrupted values (including NaN/Inf) are pulled back into
    the fault-free envelope; on in-profile activations the hardened model
    is bit-identical to the base model.
    """
    if len(profile.bounds) != len(model.injectable_infos):
        raise ValidationError(
            f"profile has {len(profile.bounds)} layer ranges, model has "
            f"{len(model.injectable_infos)} injectable layers")
    layers = [replace(layer) for layer in model.layers]
    for inj_idx, pos in enumerate(model.injectable_positions):
        lo, hi = profile.bounds[inj_idx]
        layers[pos].clamp_lo = lo
        layers[pos].clamp_hi = hi
    return Model(f"{model.name}+clipper", model.input_shape, layers, head=model.head,
                 num_classes=model.num_classes, num_boxes=model.num_boxes)


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------

LEGS = ("orig", "corr", "resil")


@dataclass(frozen=True)
class Monitor:
    callback: object
    legs: frozenset


class _NanInfObserver:
    __slots__ = ("nan", "inf")

    def __init__(self):
        self.nan = False
        self.inf = False

    def __call__(self, pos, out):
        if not self.nan and np.isnan(out).any():
            self.nan = True
        if not self.inf and np.isinf(out).any():
            self.inf = True


def _compose(*observers):
    fns = [o for o in observers if o is not None]
    if not fns:
        return None
    if len(fns) == 1:
        return fns[0]

    def observe(pos, out):
        for fn in fns:
            fn(pos, out)

    return observe


def _leg_observer(monitors, leg):
    fns = [m.callback for m in monitors if leg in m.legs]
    if not fns:
        return None
    return _compose(*fns)


# ---------------------------------------------------------------------------
# campaign execution core (shared by run_campaign and replay)
# ---------------------------------------------------------------------------

@dataclass
class _ImageOutput:
    epoch: int
    batch_index: int
    image_id: int
    label: int | None
    faults: list[FaultRecord]
    flip_dirs: list[FlipDirection]
    orig: np.ndarray
    corr: np.ndarray
    resil: np.ndarray | None
    corr_nan: bool
    corr_inf: bool
    resil_nan: bool
    resil_inf: bool


class _Scope:
    """Active fault group plus the runset bookkeeping of its lifetime."""

    def __init__(self, epoch, batch_index, image_id, corr_cm, resil_cm):
        self.epoch = epoch
        self.batch_index = batch_index
        self.image_id = image_id
        self.corr_cm = corr_cm
        self.resil_cm = resil_cm
        self.nan = False
        self.inf = False

    def close(self, runset):
        # weight mutations are logged once per scope, flagged with NaN/Inf
        # seen anywhere in the scope's corrupted inferences
        for e in self.corr_cm.weight_events:
            runset.append(RunsetRecord(
                self.epoch, self.batch_index, self.image_id, e.column, e.fault,
                e.original_bits, e.corrupted_bits, e.direction, self.nan, self.inf))


def _execute(model, ds, cfg, matrix, hardened=None, inject=True, monitors=(),
             threads=1, session=None):
    """Run the full campaign; returns (image outputs, runset records)."""
    if len(ds) != cfg.dataset_size:
        raise ValidationError(
            f"dataset has {len(ds)} samples but scenario dataset_size is {cfg.dataset_size}")
    corr_iter = resil_iter = None
    if inject:
        corr_iter = make_fault_iterator(model, matrix, cfg)
        if hardened is not None:
            resil_iter = make_fault_iterator(hardened, matrix, cfg)

    orig_obs = _leg_observer(monitors, "orig")
    corr_obs = _leg_observer(monitors, "corr")
    resil_obs = _leg_observer(monitors, "resil")

    def run_image(task):
        pos, sample, scope = task
        x = sample.image
        det = _NanInfObserver()
        if scope is None:  # no-op injection mode: the corrupted leg is the original
            orig_out = model.forward(x, observe=_compose(det, orig_obs, corr_obs))
            corr_out, corr_events = orig_out, []
            resil_out = hardened.forward(x, observe=resil_obs) if hardened is not None else None
            r_nan = r_inf = False
        else:
            orig_out = model.forward(x, observe=orig_obs)
            corr_out, corr_events = scope.corr_cm.forward(
                x, batch_pos=pos, observe=_compose(det, corr_obs))
            resil_out = None
            r_nan = r_inf = False
            if scope.resil_cm is not None:
                rdet = _NanInfObserver()
                resil_out, _ = scope.resil_cm.forward(
                    x, batch_pos=pos, observe=_compose(rdet, resil_obs))
                r_nan, r_inf = rdet.nan, rdet.inf
        return orig_out, corr_out, resil_out, corr_events, det.nan, det.inf, r_nan, r_inf

    outputs: list[_ImageOutput] = []
    runset: list[RunsetRecord] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(cfg.num_runs):
            epoch_scope = None
            for batch_index, batch in enumerate(batches(ds, cfg.batch_size)):
                if session is not None:
                    session._mid_batch = True
                tasks = []
                scopes = []
                batch_scope = None
                if inject and cfg.inj_policy is InjPolicy.PER_EPOCH:
                    if batch_index == 0:
                        if epoch_scope is not None:
                            epoch_scope.close(runset)
                        epoch_scope = _Scope(epoch, batch_index, batch[0].image_id,
                                             next(corr_iter),
                                             next(resil_iter) if resil_iter else None)
                    batch_scope = epoch_scope
                elif inject and cfg.inj_policy is InjPolicy.PER_BATCH:
                    batch_scope = _Scope(epoch, batch_index, batch[0].image_id,
                                         next(corr_iter),
                                         next(resil_iter) if resil_iter else None)
                for pos, sample in enumerate(batch):
                    if inject and cfg.inj_policy is InjPolicy.PER_IMAGE:
                        scope = _Scope(epoch, batch_index, sample.image_id,
                                       next(corr_iter),
                                       next(resil_iter) if resil_iter else None)
                    else:
                        scope = batch_scope
                    tasks.append((pos, sample, scope))
                    scopes.append(scope)

                if pool is not None:
                    results = list(pool.map(run_image, tasks))
                else:
                    results = [run_image(t) for t in tasks]

                for (pos, sample, scope), res in zip(tasks, results):
                    orig_out, corr_out, resil_out, corr_events, nan, inf, r_nan, r_inf = res
                    faults: list[FaultRecord] = []
                    dirs: list[FlipDirection] = []
                    if scope is not None:
                        scope.nan = scope.nan or nan
                        scope.inf = scope.inf or inf
                        for e in corr_events:  # neuron faults: one record per application
                            runset.append(RunsetRecord(
                                epoch, batch_index, sample.image_id, e.column, e.fault,
                                e.original_bits, e.corrupted_bits, e.direction, nan, inf))
                        faults = [rec for _, rec in scope.corr_cm.group]
                        if scope.corr_cm.weight_events:
                            dirs = [e.direction for e in scope.corr_cm.weight_events]
                        else:
                            dirs = [e.direction for e in corr_events]
                    outputs.append(_ImageOutput(
                        epoch, batch_index, sample.image_id, sample.label, faults, dirs,
                        orig_out, corr_out, resil_out, nan, inf, r_nan, r_inf))
                if inject and cfg.inj_policy is InjPolicy.PER_IMAGE:
                    for scope in scopes:
                        scope.close(runset)
                elif inject and cfg.inj_policy is InjPolicy.PER_BATCH:
                    batch_scope.close(runset)
                if session is not None:
                    session._mid_batch = False
            if inject and cfg.inj_policy is InjPolicy.PER_EPOCH and epoch_scope is not None:
                epoch_scope.close(runset)
    finally:
        if session is not None:
            session._mid_batch = False
        if pool is not None:
            pool.shutdown()

    runset.sort(key=lambda r: (r.epoch, r.batch_index, r.image_id, r.fault_column))
    return outputs, runset


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _fault_columns(faults, rnd_mode):
    """The per-image fault location columns of the CSV results.

    Weight faults map (out_ch, k_h, k_w) onto the channel/height/width
    columns; multiple faults per image are ';'-joined. The runset file
    keeps full-fidelity coordinates.
    """
    layers, channels, heights, widths, bits = [], [], [], [], []
    for rec in faults:
        layers.append(str(rec.layer))
        if isinstance(rec, NeuronFault):
            channels.append(str(rec.channel))
            heights.append(str(rec.height))
            widths.append(str(rec.width))
        else:
            channels.append(str(rec.out_ch))
            heights.append(str(rec.k_h))
            widths.append(str(rec.k_w))
        bits.append(str(int(rec.value)) if rnd_mode is RndMode.BITFLIP else _fmt(rec.value))
    return (";".join(layers), ";".join(channels), ";".join(heights),
            ";".join(widths), ";".join(bits))


_CLS_BASE = ["image_id", "gt_label"]
_CLS_TOPK = [f"top{i}" for i in range(1, 6)] + [f"p{i}" for i in range(1, 6)]
_CLS_FAULT = ["fault_layer", "fault_channel", "fault_height", "fault_width",
              "fault_bit", "flip_dir", "nan", "inf"]


def _topk_cells(logits):
    pairs = top_k(logits, 5)
    return [str(c) for c, _ in pairs] + [_fmt(p) for _, p in pairs]


def _classification_leg_text(outputs, cfg, leg) -> str:
    with_fault = leg != "orig"
    lines = [",".join(_CLS_BASE + _CLS_TOPK + (_CLS_FAULT if with_fault else []))]
    for out in outputs:
        logits = {"orig": out.orig, "corr": out.corr, "resil": out.resil}[leg]
        cells = [str(out.image_id), str(out.label if out.label is not None else -1)]
        cells += _topk_cells(logits)
        if with_fault:
            nan, inf = (out.corr_nan, out.corr_inf) if leg == "corr" else \
                       (out.resil_nan, out.resil_inf)
            fl, fc, fh, fw, fb = _fault_columns(out.faults, cfg.rnd_mode)
            cells += [fl, fc, fh, fw, fb,
                      ";".join(d.value for d in out.flip_dirs),
                      str(int(nan)), str(int(inf))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _detection_leg_text(outputs, cfg, model, leg) -> str:
    images = []
    for out in outputs:
        raw = {"orig": out.orig, "corr": out.corr, "resil": out.resil}[leg]
        dets = [
            {"bbox": [x1, y1, x2, y2], "score": score, "class": cls}
            for x1, y1, x2, y2, score, cls in decode_detections(model, raw)
        ]
        nan, inf = {"orig": (False, False), "corr": (out.corr_nan, out.corr_inf),
                    "resil": (out.resil_nan, out.resil_inf)}[leg]
        fl, fc, fh, fw, fb = _fault_columns(out.faults, cfg.rnd_mode)
        images.append({
            "image_id": out.image_id, "epoch": out.epoch,
            "detections": dets, "nan": nan, "inf": inf,
            "fault_layer": fl, "fault_channel": fc, "fault_height": fh,
            "fault_width": fw, "fault_bit": fb,
        })
    return json.dumps({"leg": leg, "images": images}, indent=2, sort_keys=True) + "\n"


def _write_results(outputs, cfg, model, results_dir, with_resil):
    legs = ["orig", "corr"] + (["resil"] if with_resil else [])
    for leg in legs:
        if model.head == "classification":
            (results_dir / f"{leg}.csv").write_text(
                _classification_leg_text(outputs, cfg, leg))
        else:
            (results_dir / f"{leg}.json").write_text(
                _detection_leg_text(outputs, cfg, model, leg))


def _write_meta(out_dir, model, hardened, ds, cfg):
    meta = out_dir / "meta"
    save_scenario(cfg, meta / "scenario.yml")
    export_ground_truth_json(ds, meta / "dataset.json")
    lines = [
        f"name: {model.name}",
        f"head: {model.head}",
        f"input_shape: {list(model.input_shape)}",
        f"layers: {len(model.layers)}",
        f"injectable_layers: {len(model.injectable_infos)}",
        f"params: {model.param_count()}",
        f"weights_sha256: {model.weights_hash()}",
    ]
    if hardened is not None:
        lines.append(f"mitigation: {hardened.name}")
    (meta / "model.txt").write_text("\n".join(lines) + "\n")


def run_campaign(model: Model, ds: DatasetHandle, cfg: ScenarioConfig, out_dir,
                 faults: FaultMatrix | None = None, with_mitigation: bool = False,
                 inject: bool = True, threads: int = 1, monitors=(),
                 session=None) -> Path:
    """Execute a campaign and write the three output sets under ``out_dir``.

    ``faults=None`` generates the matrix inline from ``cfg.seed``.
    ``inject=False`` is the dedicated no-op mode: the fault matrix is
    carried along but not applied, so the corrupted outputs equal the
    original ones bit for bit (used to validate the pipeline itself).
    """
    cfg.validate()
    if faults is None:
        faults = generate_fault_matrix(model, cfg, cfg.seed)
    if faults.scenario_hash != scenario_hash(cfg):
        raise ValidationError("fault matrix does not match the scenario (scenario_hash differs)")

    if model.head == "classification" and any(s.label is None for s in ds):
        from .dataset import assign_labels_from_model
        assign_labels_from_model(ds, model)
    if model.head == "detection" and any(s.boxes is None for s in ds):
        from .dataset import assign_boxes_from_model
        assign_boxes_from_model(ds, model)

    hardened = None
    if with_mitigation:
        hardened = harden_with_clipper(model, profile_ranges(model, ds))

    outputs, runset = _execute(model, ds, cfg, faults, hardened=hardened,
                               inject=inject, monitors=monitors, threads=threads,
                               session=session)

    out_dir = Path(out_dir)
    if out_dir.exists():
        shutil.rmtree(out_dir)
    for sub in ("meta", "faults", "results"):
        (out_dir / sub).mkdir(parents=True)
    _write_meta(out_dir, model, hardened, ds, cfg)
    save_fault_matrix(faults, out_dir / "faults" / "campaign.alff")
    write_runset(runset, out_dir / "faults" / "campaign.alfr")
    _write_results(outputs, cfg, model, out_dir / "results", with_mitigation)
    return out_dir


# ---------------------------------------------------------------------------
# session: runtime scenario mutation, monitors, sweeps
# ---------------------------------------------------------------------------

class Session:
    """Binds a model, a data set and the current scenario.

    ``set_scenario`` re-validates, regenerates the fault matrix from the
    new config's seed ("a new set of faults"), and is only legal between
    epochs; mutating the scenario mid-batch (e.g. from a monitor callback)
    is refused and the previous config stays in force.
    """

    def __init__(self, model: Model, ds: DatasetHandle, cfg: ScenarioConfig):
        self.model = model
        self.ds = ds
        self._mid_batch = False
        self.monitors: list[Monitor] = []
        self.cfg = None
        self.matrix = None
        self.set_scenario(cfg)

    def get_scenario(self) -> ScenarioConfig:
        return self.cfg

    def set_scenario(self, cfg: ScenarioConfig) -> None:
        if self._mid_batch:
            raise ValidationError(
                "set_scenario is only allowed between epochs, not mid-batch")
        cfg.validate()
        matrix = generate_fault_matrix(self.model, cfg, cfg.seed)
        self.cfg = cfg
        self.matrix = matrix

    def attach_monitor(self, callback, legs=LEGS) -> None:
        self.monitors.append(Monitor(callback=callback, legs=frozenset(legs)))

    def run(self, out_dir, with_mitigation=False, inject=True, threads=1) -> Path:
        return run_campaign(self.model, self.ds, self.cfg, out_dir,
                            faults=self.matrix, with_mitigation=with_mitigation,
                            inject=inject, threads=threads, monitors=self.monitors,
                            session=self)


def get_scenario(session: Session) -> ScenarioConfig:
    return session.get_scenario()


def set_scenario(session: Session, cfg: ScenarioConfig) -> None:
    session.set_scenario(cfg)


def attach_monitor(session: Session, callback, legs=LEGS) -> None:
    session.attach_monitor(callback, legs)


SWEEP_AXES = ("layer", "bit", "faults-per-image", "target")


def _sweep_config(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "layer":
        return replace(cfg, layer_range=(int(value), int(value)))
    if axis == "bit":
        return replace(cfg, rnd_bit_range=(int(value), int(value)))
    if axis == "faults-per-image":
        return replace(cfg, max_faults_per_image=int(value))
    if axis == "target":
        return replace(cfg, injection_target=InjectionTarget(str(value)))
    raise ValidationError(f"unknown sweep axis {axis!r} (valid: {', '.join(SWEEP_AXES)})")


def sweep(session: Session, axis: str, values, out_root, with_mitigation=False,
          threads=1) -> list[Path]:
    """One campaign per axis value; each regenerates its fault matrix.

    Output directories are tagged ``<axis>=<value>`` under ``out_root``.
    """
    out_root = Path(out_root)
    dirs = []
    for value in values:
        session.set_scenario(_sweep_config(session.cfg, axis, value))
        tag = str(value).replace("/", "_")
        dirs.append(session.run(out_root / f"{axis}={tag}",
                                with_mitigation=with_mitigation, threads=threads))
    return dirs


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayReport:
    records_checked: int
    mismatches: list[str]
    crc_ok: bool

    @property
    def ok(self) -> bool:
        return self.crc_ok and not self.mismatches


def replay(fault_file, runset_file, model: Model, ds: DatasetHandle | None = None) -> ReplayReport:
    """Re-execute every recorded injection and diff against the runset.

    Resolves the scenario (and, if needed, the data set) from the standard
    run layout around ``fault_file``: ``<run>/faults/campaign.alff`` next to
    ``<run>/meta/scenario.yml``. Refuses to replay against a different
    model or scenario than the recorded ones.
    """
    from .scenario import parse_scenario

    fault_file = Path(fault_file)
    run_dir = fault_file.parent.parent
    scenario_path = run_dir / "meta" / "scenario.yml"
    if not scenario_path.exists():
        raise ValidationError(
            f"cannot locate {scenario_path}; replay needs the run's meta/ directory")
    cfg = parse_scenario(scenario_path)
    matrix = load_fault_matrix(fault_file)
    if matrix.scenario_hash != scenario_hash(cfg):
        raise ValidationError("fault file does not match the run's scenario.yml")
    model_txt = run_dir / "meta" / "model.txt"
    if model_txt.exists():
        recorded = model_txt.read_text().splitlines()[0].split(": ", 1)[1]
        if recorded != model.name:
            raise ValidationError(
                f"replay refused: run was recorded with model '{recorded}', got '{model.name}'")
    if ds is None:
        from .dataset import load_dataset
        ds = load_dataset(run_dir / "meta" / "dataset.json", model=model)

    if model.head == "classification" and any(s.label is None for s in ds):
        from .dataset import assign_labels_from_model
        assign_labels_from_model(ds, model)

    recorded_records, crc_ok = load_runset(runset_file, matrix.target, strict=False)
    outputs, replayed = _execute(model, ds, cfg, matrix, hardened=None, inject=True)

    mismatches = []
    if not crc_ok:
        mismatches.append("runset checksum mismatch (file tampered or corrupted)")
    if len(recorded_records) != len(replayed):
        mismatches.append(
            f"record count differs: recorded {len(recorded_records)}, replayed {len(replayed)}")
    for i, (a, b) in enumerate(zip(recorded_records, replayed)):
        if a != b:
            mismatches.append(f"record {i} differs: recorded {a} vs replayed {b}")
    # final corrupted outputs: diff against the recorded result file when present
    if model.head == "classification":
        corr_path = run_dir / "results" / "corr.csv"
        replayed_text = _classification_leg_text(outputs, cfg, "corr")
    else:
        corr_path = run_dir / "results" / "corr.json"
        replayed_text = _detection_leg_text(outputs, cfg, model, "corr")
    if corr_path.exists() and corr_path.read_text() != replayed_text:
        mismatches.append(f"final corrupted outputs differ from {corr_path.name}")
    return ReplayReport(records_checked=len(replayed), mismatches=mismatches, crc_ok=crc_ok)


def verify_replay(fault_file, runset_file, model, ds=None) -> ReplayReport:
    """Replay and raise :class:`ReplayMismatchError` on any divergence."""
    report = replay(fault_file, runset_file, model, ds)
    if not report.ok:
        raise ReplayMismatchError(
            f"{len(report.mismatches)} mismatch(es): " + "; ".join(report.mismatches[:3]))
    return report
