"""Command-line driver: gen-data, simulate, evaluate, fit-curve."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import Ablation, ConfigError, SimulationConfig, load_config
from .datagen import (
    TRUTH_SCHEMA,
    CohortSpec,
    DataError,
    gen_ground_truth,
    gen_item_bank,
    ingest_log,
    load_item_bank,
    write_dataset,
    write_item_bank,
)
from .evaluation import (
    BIN_WIDTH,
    KeyMismatchError,
    UndefinedMetricError,
    curve_csv,
    curve_svg,
    evaluate_run,
    fit_power_law,
)
from .harness import LOG_SCHEMA, run_cohort, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e.strerror}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _positive(name):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v
    return conv


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    out = _out_dir(args.out)
    bank = gen_item_bank(args.items, args.concept_dim, args.seed)
    spec = CohortSpec(n_students=args.students, n_opportunities=args.opportunities)
    ds = gen_ground_truth(spec, bank, args.seed)
    items = write_item_bank(bank, out / "items.json")
    truth = write_dataset(ds, out / "truth.jsonl")
    cfg = {"item_bank_ref": items.name, "dataset_ref": truth.name, "concept_dim": args.concept_dim}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    print(f"wrote {items}, {truth} ({len(ds.records)} records), {out / 'config.json'}")
    return EXIT_OK


def write_manifest(path: Path, cfg: SimulationConfig, outputs: dict) -> dict:
    inputs = {}
    for key in ("item_bank_ref", "dataset_ref", "perceptron_weights"):
        ref = getattr(cfg, key)
        if ref:
            inputs[key] = {"path": ref, "sha256": sha256_file(ref)}
    doc = {
        "tool": "cogevo",
        "version": __version__,
        "master_seed": cfg.master_seed,
        "config": cfg.to_dict(),
        "inputs": inputs,
        "outputs": outputs,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def cmd_simulate(args) -> int:
    cfg_path = args.config or os.environ.get("COGEVO_CONFIG")
    if not cfg_path:
        raise UsageError("simulate: --config is required (or set COGEVO_CONFIG)")
    if not Path(cfg_path).exists():
        raise ConfigError("", f"config file not found: {cfg_path}")
    cfg = load_config(cfg_path)
    changes = {}
    if args.ablate:
        changes["ablation"] = cfg.ablation | {Ablation(a) for a in args.ablate}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if changes:
        cfg = cfg.with_(**changes)
    for key in ("item_bank_ref", "dataset_ref"):
        if not Path(getattr(cfg, key)).exists():
            raise DataError(f"{key}: file not found: {getattr(cfg, key)}")
    out = _out_dir(args.out)
    log_path = out / "log.jsonl"
    write_manifest(out / MANIFEST, cfg, {"log": str(log_path.resolve())})
    bank = load_item_bank(cfg.item_bank_ref)
    ds = ingest_log(cfg.dataset_ref)
    result = run_cohort(cfg, bank, ds)
    write_log(log_path, cfg, result)
    print(f"wrote {log_path} ({len(result.logs)} students)")
    return EXIT_OK


def verify_manifest(log_path: Path, truth_path: Path) -> None:
    """Check input hashes recorded next to a log, if a manifest is there."""
    mpath = log_path.parent / MANIFEST
    if not mpath.exists():
        return
    doc = json.loads(mpath.read_text())
    for key, entry in doc.get("inputs", {}).items():
        p = Path(entry["path"])
        if not p.exists():
            raise DataError(f"manifest input {key} is missing: {p}")
        if sha256_file(p) != entry["sha256"]:
            raise DataError(f"manifest input {key} changed since the run: {p}")
    ds_entry = doc.get("inputs", {}).get("dataset_ref")
    if ds_entry and sha256_file(truth_path) != ds_entry["sha256"]:
        raise DataError(f"{truth_path} is not the dataset this log was simulated on")


def _read_any_log(path: Path):
    """Rows and item-bank path from an interaction log or a ground-truth file."""
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError:
        raise DataError(f"{path}: header line is not JSON") from None
    schema = header.get("schema") if isinstance(header, dict) else None
    if schema == LOG_SCHEMA:
        with path.open(encoding="utf-8") as fh:
            fh.readline()
            rows = [json.loads(line) for line in fh if line.strip()]
        return rows, header["config"].get("item_bank_ref")
    if schema == TRUTH_SCHEMA:
        ds = ingest_log(path)
        rows = [
            {"student": r.student, "t": r.t, "item": r.item, "p_hat": float(r.correct),
             "correct": r.correct, "misconception": r.misconception, "delta_align": None}
            for r in ds.records
        ]
        return rows, None
    raise DataError(f"{path}: unknown schema {schema!r}")


def cmd_evaluate(args) -> int:
    log_path, truth_path = Path(args.log), Path(args.truth)
    for p in (log_path, truth_path):
        if not p.exists():
            raise DataError(f"file not found: {p}")
    verify_manifest(log_path, truth_path)
    rows, bank_ref = _read_any_log(log_path)
    bank_ref = args.items or bank_ref or str(truth_path.parent / "items.json")
    if not Path(bank_ref).exists():
        raise DataError(f"item bank not found: {bank_ref} (pass --items)")
    bank = load_item_bank(bank_ref)
    ds = ingest_log(truth_path)
    report, curves = evaluate_run(rows, ds.records, bank.knowledge_points(), args.bin_width)
    bad = report.check_ranges()
    if bad:
        raise InvariantError("report out of range: " + "; ".join(bad))

    out = _out_dir(args.out)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "curve.csv").write_text(curve_csv(curves.ns, curves.human, curves.agent, curves.fitted))
    series = {"human": curves.human, "agent": curves.agent}
    if all(math.isfinite(v) for v in curves.fitted):
        series["agent fit"] = curves.fitted
    (out / "curve.svg").write_text(curve_svg(curves.ns, series))

    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    print(
        f"auc={fmt(report.auc)} rmse={fmt(report.rmse)} mp={fmt(report.mistake_precision)} "
        f"r2_lc={fmt(report.r2_lc)} align={fmt(report.align)}"
    )
    print(f"wrote report.json, report.csv, curve.csv, curve.svg to {out}")
    return EXIT_OK


def read_series(path) -> list[tuple[float, float]]:
    """Two numeric columns (opportunity, error rate); a header row is skipped."""
    pts = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 1:
                    continue
                raise DataError(f"{path}:{i}: expected two numeric columns") from None
    return pts


def cmd_fit_curve(args) -> int:
    path = Path(args.series)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    pts = read_series(path)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_power_law(pts)
    except ValueError as e:
        raise DataError(str(e)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"A={fit.A:.6f} alpha={fit.alpha:.4f} eps={fit.eps:.6f} fit_r2={fit.fit_r2:.6f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cogevo", description=__doc__)
    p.add_argument("--version", action="version", version=f"cogevo {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate an item bank and a ground-truth cohort")
    g.add_argument("--items", type=_positive("--items"), default=1600)
    g.add_argument("--students", type=_positive("--students"), default=100)
    g.add_argument("--opportunities", type=_positive("--opportunities"), default=100)
    g.add_argument("--concept-dim", type=_positive("--concept-dim"), default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("simulate", help="replay a cohort through the agent")
    s.add_argument("--config", help="config JSON (default: $COGEVO_CONFIG)")
    s.add_argument("--out", required=True)
    s.add_argument("--ablate", action="append", choices=[a.value for a in Ablation])
    s.add_argument("--jobs", type=_positive("--jobs"))
    s.add_argument("--seed", type=int, help="override master_seed")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="score a log against ground truth")
    e.add_argument("--log", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--items", help="item bank (default: from the log header)")
    e.add_argument("--bin-width", type=_positive("--bin-width"), default=BIN_WIDTH)
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("fit-curve", help="fit the power-law learning curve to a CSV series")
    f.add_argument("--series", required=True)
    f.set_defaults(func=cmd_fit_curve)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, KeyMismatchError, UndefinedMetricError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, AssertionError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
