"""KPI computation from campaign result files.

Silent data errors (SDE) are counted against the fault-free leg, not
against external ground truth: a classification inference is an SDE event
when its top-1 class differs from the fault-free top-1; a detection
inference is an SDE event when its detection set changes materially
(missed box, spurious box, class change, or a matched box drifting below
the IoU threshold). An inference whose monitored outputs contained NaN/Inf
is a DUE (detected, uncorrected) event and is excluded from SDE counting.

Reports keep raw integer counts alongside the rates so per-bit and
per-layer breakdowns recompose the overall rate exactly: every
(inference, fault) pair contributes one injection to its bit's and layer's
bucket, hence sum(bucket.sde) / sum(bucket.count) == sde_rate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor_core import softmax


def top_k(logits, k: int = 5) -> list[tuple[int, float]]:
    """Top-k (class, softmax probability), descending; ties break toward the
    lower class id; padded with (-1, -1.0) when there are fewer classes."""
    logits = np.asarray(logits, dtype=np.float32)
    probs = softmax(logits)
    order = sorted(range(len(probs)), key=lambda c: (-float(probs[c]), c))
    pairs = [(c, float(probs[c])) for c in order[:k]]
    while len(pairs) < k:
        pairs.append((-1, -1.0))
    return pairs


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

@dataclass
class ClassificationRow:
    image_id: int
    gt_label: int
    top5: list[tuple[int, float]]
    leg: str
    fault_layers: list[int] = field(default_factory=list)
    fault_bits: list[str] = field(default_factory=list)
    flip_dirs: list[str] = field(default_factory=list)
    nan: bool = False
    inf: bool = False

    @property
    def top1(self) -> int:
        return self.top5[0][0]


@dataclass
class DetectionRow:
    image_id: int
    objects: list[tuple[int, float, tuple[float, float, float, float]]]
    leg: str
    fault_layers: list[int] = field(default_factory=list)
    fault_bits: list[str] = field(default_factory=list)
    nan: bool = False
    inf: bool = False


def _split_ints(cell: str) -> list[int]:
    return [int(v) for v in cell.split(";")] if cell else []


def _split_strs(cell: str) -> list[str]:
    return cell.split(";") if cell else []


def read_classification_rows(path, leg: str) -> list[ClassificationRow]:
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            top5 = [(int(raw[f"top{i}"]), float(raw[f"p{i}"])) for i in range(1, 6)]
            rows.append(ClassificationRow(
                image_id=int(raw["image_id"]),
                gt_label=int(raw["gt_label"]),
                top5=top5,
                leg=leg,
                fault_layers=_split_ints(raw.get("fault_layer", "")),
                fault_bits=_split_strs(raw.get("fault_bit", "")),
                flip_dirs=_split_strs(raw.get("flip_dir", "")),
                nan=raw.get("nan", "0") == "1",
                inf=raw.get("inf", "0") == "1",
            ))
    return rows


def read_detection_rows(path, leg: str) -> list[DetectionRow]:
    with open(path) as f:
        doc = json.load(f)
    rows = []
    for img in doc["images"]:
        objects = [(d["class"], d["score"], tuple(d["bbox"])) for d in img["detections"]]
        rows.append(DetectionRow(
            image_id=img["image_id"],
            objects=objects,
            leg=leg,
            fault_layers=_split_ints(img.get("fault_layer", "")),
            fault_bits=_split_strs(img.get("fault_bit", "")),
            nan=bool(img.get("nan", False)),
            inf=bool(img.get("inf", False)),
        ))
    return rows


# ---------------------------------------------------------------------------
# KPI report
# ---------------------------------------------------------------------------

@dataclass
class KpiReport:
    """SDE/DUE rates plus per-bit and per-layer injection breakdowns.

    ``per_bit``/``per_layer`` map bucket -> (injection count, sde events):
    raw counts, so downstream consumers can recompose rates exactly.
    """

    total: int
    sde_count: int
    due_count: int
    per_bit: dict[int, tuple[int, int]] = field(default_factory=dict)
    per_layer: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def sde_rate(self) -> float:
        return self.sde_count / self.total if self.total else 0.0

    @property
    def due_rate(self) -> float:
        return self.due_count / self.total if self.total else 0.0


def _bucket(table: dict, key, sde: bool) -> None:
    count, events = table.get(key, (0, 0))
    table[key] = (count + 1, events + (1 if sde else 0))


def _accumulate(report: KpiReport, row, sde: bool) -> None:
    for layer in row.fault_layers:
        _bucket(report.per_layer, layer, sde)
    for bit in row.fault_bits:
        try:
            bit_i = int(bit)
        except ValueError:
            continue  # random-value campaigns have no bit position
        _bucket(report.per_bit, bit_i, sde)


def _paired(orig_rows, corr_rows):
    if len(orig_rows) != len(corr_rows):
        raise ValidationError(
            f"leg row counts differ: {len(orig_rows)} vs {len(corr_rows)}")
    for o, c in zip(orig_rows, corr_rows):
        if o.image_id != c.image_id:
            raise ValidationError(
                f"leg image ids diverge: {o.image_id} vs {c.image_id}")
        yield o, c


def sde_due_classification(orig_rows, corr_rows) -> KpiReport:
    """Per-inference comparison of a corrupted leg against the fault-free leg."""
    report = KpiReport(total=len(corr_rows), sde_count=0, due_count=0)
    for o, c in _paired(orig_rows, corr_rows):
        due = c.nan or c.inf
        sde = (not due) and (c.top1 != o.top1)
        if due:
            report.due_count += 1
        elif sde:
            report.sde_count += 1
        _accumulate(report, c, sde)
    return report


def iou(box_a, box_b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes; degenerate
    zero-area pairs yield 0."""
    ax1, ay1, ax2, ay2 = box_a[:4]
    bx1, by1, bx2, by2 = box_b[:4]
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return inter / union


def _greedy_match(orig_objs, corr_objs):
    """One-to-one greedy matching by descending IoU over positive-overlap pairs."""
    pairs = []
    for oi, (_, _, ob) in enumerate(orig_objs):
        for ci, (_, _, cb) in enumerate(corr_objs):
            v = iou(ob, cb)
            if v > 0.0:
                pairs.append((v, oi, ci))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_o, used_c, matches = set(), set(), []
    for v, oi, ci in pairs:
        if oi in used_o or ci in used_c:
            continue
        used_o.add(oi)
        used_c.add(ci)
        matches.append((oi, ci, v))
    return matches, used_o, used_c


def detection_image_corrupted(orig_objs, corr_objs, iou_thresh=0.5) -> bool:
    """Image-wise corruption: any missed box, spurious box, class change or
    matched overlap below the threshold counts the image as corrupted.

    Isolated here so a different matching rule can be swapped in.
    """
    matches, used_o, used_c = _greedy_match(orig_objs, corr_objs)
    if len(used_o) != len(orig_objs) or len(used_c) != len(corr_objs):
        return True
    for oi, ci, v in matches:
        if v < iou_thresh:
            return True
        if orig_objs[oi][0] != corr_objs[ci][0]:
            return True
    return False


def sde_due_detection(orig_rows, corr_rows, iou_thresh: float = 0.5,
                      conf_thresh: float = 0.25) -> KpiReport:
    """Image-wise detection comparison against the fault-free leg.

    Only boxes with score >= ``conf_thresh`` participate.
    """
    report = KpiReport(total=len(corr_rows), sde_count=0, due_count=0)
    for o, c in _paired(orig_rows, corr_rows):
        due = c.nan or c.inf
        if due:
            report.due_count += 1
            sde = False
        else:
            o_objs = [obj for obj in o.objects if obj[1] >= conf_thresh]
            c_objs = [obj for obj in c.objects if obj[1] >= conf_thresh]
            sde = detection_image_corrupted(o_objs, c_objs, iou_thresh)
            if sde:
                report.sde_count += 1
        _accumulate(report, c, sde)
    return report


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _table_dict(table):
    return {
        str(k): {"count": c, "sde": s, "rate": (s / c if c else 0.0)}
        for k, (c, s) in sorted(table.items())
    }


def write_report(report: KpiReport, out_dir, fmt: str = "csv", prefix: str = "kpi") -> list[Path]:
    """Write a KPI report; CSV emits kpi/per-bit/per-layer tables, JSON one
    document. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        doc = {
            "total": report.total,
            "sde_count": report.sde_count,
            "due_count": report.due_count,
            "sde_rate": report.sde_rate,
            "due_rate": report.due_rate,
            "per_bit": _table_dict(report.per_bit),
            "per_layer": _table_dict(report.per_layer),
        }
        path = out_dir / f"{prefix}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return [path]
    if fmt != "csv":
        raise ValidationError(f"unknown report format {fmt!r} (valid: csv, json)")
    main = out_dir / f"{prefix}.csv"
    main.write_text(
        "total,sde_count,due_count,sde_rate,due_rate\n"
        f"{report.total},{report.sde_count},{report.due_count},"
        f"{report.sde_rate!r},{report.due_rate!r}\n")
    paths = [main]
    for name, table in (("per_bit", report.per_bit), ("per_layer", report.per_layer)):
        path = out_dir / f"{prefix}_{name}.csv"
        lines = [f"{name.split('_')[1]},count,sde,sde_rate"]
        for key, (c, s) in sorted(table.items()):
            lines.append(f"{key},{c},{s},{(s / c if c else 0.0)!r}")
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def load_report(path) -> KpiReport:
    """Parse a report back (CSV main table plus siblings, or the JSON doc)."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return KpiReport(
            total=doc["total"], sde_count=doc["sde_count"], due_count=doc["due_count"],
            per_bit={int(k): (v["count"], v["sde"]) for k, v in doc["per_bit"].items()},
            per_layer={int(k): (v["count"], v["sde"]) for k, v in doc["per_layer"].items()},
        )
    with open(path, newline="") as f:
        row = next(csv.DictReader(f))
    report = KpiReport(total=int(row["total"]), sde_count=int(row["sde_count"]),
                       due_count=int(row["due_count"]))
    for name, table in (("per_bit", report.per_bit), ("per_layer", report.per_layer)):
        sibling = path.with_name(path.stem + f"_{name}.csv")
        if sibling.exists():
            with open(sibling, newline="") as f:
                for raw in csv.DictReader(f):
                    key = int(raw["bit" if name == "per_bit" else "layer"])
                    table[key] = (int(raw["count"]), int(raw["sde"]))
    return report


# ---------------------------------------------------------------------------
# whole-run evaluation
# ---------------------------------------------------------------------------

def evaluate_run(run_dir, iou_thresh: float = 0.5, conf_thresh: float = 0.25
                 ) -> dict[str, KpiReport]:
    """KPIs of a finished campaign directory, keyed by corrupted leg name."""
    results = Path(run_dir) / "results"
    reports: dict[str, KpiReport] = {}
    if (results / "orig.csv").exists():
        orig = read_classification_rows(results / "orig.csv", "orig")
        for leg in ("corr", "resil"):
            path = results / f"{leg}.csv"
            if path.exists():
                reports[leg] = sde_due_classification(
                    orig, read_classification_rows(path, leg))
    elif (results / "orig.json").exists():
        orig = read_detection_rows(results / "orig.json", "orig")
        for leg in ("corr", "resil"):
            path = results / f"{leg}.json"
            if path.exists():
                reports[leg] = sde_due_detection(
                    orig, read_detection_rows(path, leg), iou_thresh, conf_thresh)
    else:
        raise ValidationError(f"{results} contains no orig.csv or orig.json")
    return reports


def write_detection_report(run_dir, reports: dict[str, KpiReport], out_path=None) -> Path:
    """Single detection JSON: per-image {class, score, bbox} arrays for every
    leg plus the kpi object(s)."""
    results = Path(run_dir) / "results"
    if not (results / "orig.json").exists():
        raise ValidationError(f"{results} has no detection results")
    legs = {}
    for leg in ("orig", "corr", "resil"):
        p = results / f"{leg}.json"
        if p.exists():
            legs[leg] = {r.image_id: r for r in read_detection_rows(p, leg)}
    images = []
    for image_id in sorted(legs["orig"]):
        entry = {"image_id": image_id}
        for leg, rows in legs.items():
            row = rows[image_id]
            entry[leg] = [
                {"class": cls, "score": score, "bbox": list(bbox)}
                for cls, score, bbox in row.objects
            ]
        images.append(entry)
    kpi = {
        leg: {
            "total": r.total, "sde_count": r.sde_count, "due_count": r.due_count,
            "sde_rate": r.sde_rate, "due_rate": r.due_rate,
            "per_bit": _table_dict(r.per_bit), "per_layer": _table_dict(r.per_layer),
        }
        for leg, r in reports.items()
    }
    out_path = Path(out_path) if out_path else results.parent / "eval" / "detection_report.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps({"images": images, "kpi": kpi},
                                   indent=2, sort_keys=True) + "\n")
    return out_path


_JOIN_FAULT = ["fault_layer", "fault_channel", "fault_height", "fault_width",
               "fault_bit", "flip_dir", "nan", "inf"]


def write_joined_results(run_dir, out_path=None) -> Path:
    """Single classification CSV joining all legs per image row.

    Columns: image_id, gt_label, orig_top1..5, orig_p1..5, corr_top1..5,
    corr_p1..5, resil_top1..5, resil_p1..5, then the fault location columns;
    resil cells stay empty for campaigns without a mitigation leg.
    """
    results = Path(run_dir) / "results"
    if not (results / "orig.csv").exists():
        raise ValidationError(f"{results} has no classification results to join")
    out_path = Path(out_path) if out_path else results / "joined.csv"

    def read_raw(leg):
        p = results / f"{leg}.csv"
        if not p.exists():
            return None
        with open(p, newline="") as f:
            return list(csv.DictReader(f))

    orig, corr, resil = read_raw("orig"), read_raw("corr"), read_raw("resil")
    header = ["image_id", "gt_label"]
    for leg in ("orig", "corr", "resil"):
        header += [f"{leg}_top{i}" for i in range(1, 6)]
        header += [f"{leg}_p{i}" for i in range(1, 6)]
    header += _JOIN_FAULT
    lines = [",".join(header)]
    for i, (o, c) in enumerate(zip(orig, corr)):
        r = resil[i] if resil else None
        cells = [o["image_id"], o["gt_label"]]
        for leg_row in (o, c, r):
            for key in [f"top{i}" for i in range(1, 6)] + [f"p{i}" for i in range(1, 6)]:
                cells.append(leg_row[key] if leg_row else "")
        cells += [c.get(k, "") for k in _JOIN_FAULT]
        lines.append(",".join(cells))
    out_path.write_text("\n".join(lines) + "\n")
    return out_path
