"""Command-line front end.

Subcommands map 1:1 onto the library: generate (fault matrix file), run
(full campaign), sweep (series of campaigns along one axis), eval (KPIs of
a finished run), replay (re-execute and verify a recorded run).

Exit codes: 0 success, 1 validation/configuration error, 2 runtime error,
3 replay mismatch.

Seed precedence: --seed beats FAULTFORGE_SEED beats the scenario file.
FAULTFORGE_OUT, when set, is the default parent of output directories.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .campaign import Session, replay, run_campaign, sweep
from .dataset import dataset_for_model, load_dataset
from .errors import FaultForgeError, FileFormatError, ValidationError
from .evaluation import (
    evaluate_run,
    write_detection_report,
    write_joined_results,
    write_report,
)
from .fault_gen import generate_fault_matrix, load_fault_matrix, save_fault_matrix
from .model_registry import resolve_model
from .prng import derive_seed
from .scenario import OUT_ENV_VAR, parse_scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_cfg(args):
    cfg = parse_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _load_dataset(args, model, cfg):
    spec = getattr(args, "dataset", None) or "synthetic"
    if spec == "synthetic":
        return dataset_for_model(model, cfg.dataset_size, derive_seed(cfg.seed, "dataset"))
    if spec.startswith("synthetic:"):
        return dataset_for_model(model, cfg.dataset_size, int(spec.split(":", 1)[1], 0))
    return load_dataset(spec, model=model)


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, ".")) / name


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    model = resolve_model(args.model)
    matrix = generate_fault_matrix(model, cfg, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_fault_matrix(matrix, out)
    print(f"wrote {len(matrix)} faults to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    model = resolve_model(args.model)
    ds = _load_dataset(args, model, cfg)
    faults = load_fault_matrix(args.faults) if args.faults else None
    out_dir = Path(args.out_dir) if args.out_dir else _default_out("faultforge_run")
    run_campaign(model, ds, cfg, out_dir, faults=faults,
                 with_mitigation=args.mitigation == "on",
                 threads=args.threads)
    print(f"campaign written to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    model = resolve_model(args.model)
    ds = _load_dataset(args, model, cfg)
    values = []
    for v in args.values.split(","):
        v = v.strip()
        values.append(v if args.axis == "target" else int(v))
    out_root = Path(args.out_dir) if args.out_dir else _default_out("faultforge_sweep")
    session = Session(model, ds, cfg)
    dirs = sweep(session, args.axis, values, out_root,
                 with_mitigation=args.mitigation == "on", threads=args.threads)
    for d in dirs:
        print(f"swept {d}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.results)
    reports = evaluate_run(run_dir, iou_thresh=args.iou_thresh,
                           conf_thresh=args.conf_thresh)
    out_dir = Path(args.out) if args.out else run_dir / "eval"
    for leg, report in reports.items():
        prefix = "kpi" if leg == "corr" else f"kpi_{leg}"
        paths = write_report(report, out_dir, fmt=args.format, prefix=prefix)
        print(f"{leg}: total={report.total} sde_rate={report.sde_rate:.4f} "
              f"due_rate={report.due_rate:.4f} -> {paths[0]}")
    if (run_dir / "results" / "orig.csv").exists():
        joined = write_joined_results(run_dir, out_dir / "joined.csv")
        print(f"joined results -> {joined}")
    else:
        combined = write_detection_report(run_dir, reports,
                                          out_dir / "detection_report.json")
        print(f"detection report -> {combined}")
    return 0


def cmd_replay(args) -> int:
    model = resolve_model(args.model)
    ds = None
    if args.dataset:
        ds = load_dataset(args.dataset, model=model)
    report = replay(args.faults, args.runset, model, ds)
    if report.ok:
        print(f"replay clean: {report.records_checked} records verified")
        return 0
    for m in report.mismatches:
        print(f"MISMATCH: {m}", file=sys.stderr)
    return 3


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultforge",
                     description="Fault-injection campaigns on a built-in inference core")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="pre-generate a fault matrix file")
    p.add_argument("--scenario", required=True, help="scenario yml file")
    p.add_argument("--model", required=True, help="built-in model name or .alfm path")
    p.add_argument("--out", required=True, help="output .alff path")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="override the scenario seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run a full campaign")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default="synthetic",
                   help="'synthetic', 'synthetic:SEED' or a dataset.json path")
    p.add_argument("--faults", help="reuse a pre-generated .alff file")
    p.add_argument("--out-dir", help=f"output directory (default under ${OUT_ENV_VAR} or .)")
    p.add_argument("--mitigation", choices=("on", "off"), default="off",
                   help="add the clipper-hardened third leg")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="series of campaigns along one axis")
    p.add_argument("--axis", required=True,
                   choices=("layer", "bit", "faults-per-image", "target"))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--out-dir")
    p.add_argument("--mitigation", choices=("on", "off"), default="off")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="compute KPI files for a finished run")
    p.add_argument("--results", required=True, help="campaign output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="where to write KPI files (default <run>/eval)")
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--conf-thresh", type=float, default=0.25)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-execute a recorded run and verify it")
    p.add_argument("--faults", required=True, help="the run's campaign.alff")
    p.add_argument("--runset", required=True, help="the run's campaign.alfr")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", help="dataset.json (default: the run's meta/dataset.json)")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except (ValidationError, FileFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FaultForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
