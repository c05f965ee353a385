"""Experiment command line.

Three verbs:

- run: execute the optimizer runs described by a JSON config against one
  dataset, writing one trace CSV and one metadata sidecar per run plus a
  bundle summary.
- compare: read the sidecars and traces from a run directory and print a
  communication-efficiency table (best objective value, rounds and
  scalars to reach gradient-norm thresholds).
- check: execute the built-in consistency battery.

Exit codes: 0 success, 1 failed checks, 2 configuration or usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .algorithms import METHODS, IterationTrace, RunConfig, run
from .data_io import (
    Dataset,
    load_libsvm_file,
    load_toy,
    make_synthetic,
    normalize_labels,
    partition,
)
from .objective import Regularizer
from .selfcheck import run_all_checks

__all__ = ["main", "CONFIG_SCHEMA", "load_config", "expand_runs"]

GRAD_THRESHOLDS = (1e-2, 1e-4, 1e-6)

TRACE_COLUMNS = ("k", "f", "grad_norm", "gamma", "lambda_min", "up_scalars", "down_scalars")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "runs"],
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["toy", "file", "synthetic"]}},
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "file"}}},
                    "then": {
                        "required": ["path"],
                        "properties": {
                            "kind": {},
                            "path": {"type": "string", "minLength": 1},
                        },
                        "additionalProperties": False,
                    },
                },
                {
                    "if": {"properties": {"kind": {"const": "synthetic"}}},
                    "then": {
                        "required": ["num_samples", "num_features"],
                        "properties": {
                            "kind": {},
                            "num_samples": {"type": "integer", "minimum": 1},
                            "num_features": {"type": "integer", "minimum": 1},
                            "seed": {"type": "integer", "minimum": 0},
                            "density": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "flip_fraction": {"type": "number", "minimum": 0, "maximum": 0.5},
                            "scale": {"type": "number", "exclusiveMinimum": 0},
                        },
                        "additionalProperties": False,
                    },
                },
                {
                    "if": {"properties": {"kind": {"const": "toy"}}},
                    "then": {
                        "properties": {"kind": {}},
                        "additionalProperties": False,
                    },
                },
            ],
        },
        "partition": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_clients": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "objective": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": {"type": "number", "minimum": 0},
                "regularizer": {"enum": ["l2", "smooth_nonconvex"]},
            },
        },
        "transport": {"enum": ["inproc", "tcp"]},
        "grad_tol": {"type": "number", "minimum": 0},
        "x0": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "record": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "boolean"},
                "lambda_min": {"type": "boolean"},
                "snapshots": {"type": "boolean"},
            },
        },
        "wall_clock": {"type": "boolean"},
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["method", "rounds"],
                "additionalProperties": False,
                "properties": {
                    "method": {"enum": list(METHODS)},
                    "rounds": {"type": "integer", "minimum": 1},
                    "M": {
                        "anyOf": [
                            {"type": "number"},
                            {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        ]
                    },
                    "eta": {
                        "anyOf": [
                            {"type": "number"},
                            {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        ]
                    },
                    "beta": {
                        "anyOf": [
                            {"type": "number"},
                            {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        ]
                    },
                    "giant_warmup_rounds": {"type": "integer", "minimum": 0},
                    "label": {"type": "string", "minLength": 1},
                },
            },
        },
    },
}


class ConfigError(Exception):
    """Configuration problem the user must fix; maps to exit code 2."""


def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {exc.message} (at {where})") from None
    return cfg


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_dataset(spec: dict) -> tuple[Dataset, dict]:
    """Materialize the dataset and a reproducible descriptor with a fingerprint."""
    kind = spec["kind"]
    if kind == "toy":
        ds = load_toy()
        from importlib import resources

        raw = resources.files("c2eden").joinpath("data/toy_d10.libsvm").read_bytes()
        desc = {"kind": "toy", "fingerprint": _sha256_bytes(raw)}
    elif kind == "file":
        path = Path(spec["path"])
        try:
            ds = load_libsvm_file(path)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {path}: {exc}") from None
        ds = normalize_labels(ds)
        desc = {
            "kind": "file",
            "path": str(path),
            "fingerprint": _sha256_bytes(path.read_bytes()),
        }
    else:
        args = {
            "num_samples": spec["num_samples"],
            "num_features": spec["num_features"],
            "seed": spec.get("seed", 0),
            "density": spec.get("density", 0.8),
            "flip_fraction": spec.get("flip_fraction", 0.1),
            "scale": spec.get("scale", 1.0),
        }
        ds = make_synthetic(**args)
        desc = {
            "kind": "synthetic",
            **args,
            "fingerprint": _sha256_bytes(json.dumps(args, sort_keys=True).encode()),
        }
    return ds, desc


def _problem_key(dataset_desc: dict, part: dict, obj: dict) -> str:
    blob = json.dumps(
        {"dataset": dataset_desc, "partition": part, "objective": obj}, sort_keys=True
    )
    return _sha256_bytes(blob.encode())


def _sanitize_label(label: str) -> str:
    return "".join(c if (c.isalnum() or c in "._=-") else "-" for c in label)


def expand_runs(cfg: dict) -> list[tuple[str, RunConfig]]:
    """Expand list-valued M/eta/beta fields into a grid of labeled runs."""
    record = cfg.get("record", {})
    shared = dict(
        grad_tol=cfg.get("grad_tol", 0.0),
        transport=cfg.get("transport", "inproc"),
        x0=tuple(cfg["x0"]) if "x0" in cfg else None,
        record_gamma=record.get("gamma", False),
        record_lambda_min=record.get("lambda_min", False),
        record_snapshots=record.get("snapshots", False),
    )
    out: list[tuple[str, RunConfig]] = []
    used: set[str] = set()
    for entry in cfg["runs"]:
        grid_fields = {}
        fixed = {}
        for name in ("M", "eta", "beta"):
            if name not in entry:
                continue
            value = entry[name]
            if isinstance(value, list):
                grid_fields[name] = value
            else:
                fixed[name] = value
        base = entry.get("label", entry["method"])
        names = sorted(grid_fields)
        for combo in itertools.product(*(grid_fields[n] for n in names)):
            chosen = dict(zip(names, combo))
            label = base
            if chosen:
                label += "_" + "_".join(f"{n}={v:g}" for n, v in sorted(chosen.items()))
            label = _sanitize_label(label)
            while label in used:
                label += "+"
            used.add(label)
            try:
                rc = RunConfig(
                    method=entry["method"],
                    rounds=entry["rounds"],
                    giant_warmup_rounds=entry.get("giant_warmup_rounds", 20),
                    label=label,
                    **fixed,
                    **chosen,
                    **shared,
                )
            except ValueError as exc:
                raise ConfigError(f"run {label!r}: {exc}") from None
            out.append((label, rc))
    return out


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_trace_csv(path: Path, trace: IterationTrace, wall_clock: bool) -> None:
    """One row per iterate; wall-clock column only on request so reruns of
    a deterministic config produce byte-identical files."""
    cols = list(TRACE_COLUMNS) + (["wall_ms"] if wall_clock else [])
    lines = [",".join(cols)]
    for row in trace.rows:
        cells = [
            _fmt_cell(row.k),
            _fmt_cell(row.f),
            _fmt_cell(row.grad_norm),
            _fmt_cell(row.gamma),
            _fmt_cell(row.lambda_min),
            _fmt_cell(row.up_scalars),
            _fmt_cell(row.down_scalars),
        ]
        if wall_clock:
            cells.append(_fmt_cell(row.wall_ms))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def _run_config_json(rc: RunConfig) -> dict:
    data = asdict(rc)
    data["x0"] = list(rc.x0) if rc.x0 is not None else None
    return data


def write_sidecar(
    path: Path,
    label: str,
    rc: RunConfig,
    trace: IterationTrace,
    dataset_desc: dict,
    part: dict,
    obj: dict,
    csv_name: str,
) -> None:
    doc = {
        "tool_version": __version__,
        "label": label,
        "method": rc.method,
        "run_config": _run_config_json(rc),
        "dataset": dataset_desc,
        "partition": part,
        "objective": obj,
        "problem_key": _problem_key(dataset_desc, part, obj),
        "results": {
            "rounds_completed": trace.rows[-1].k,
            "final_f": trace.final_f,
            "final_grad_norm": trace.rows[-1].grad_norm,
            "up_scalars": trace.ledger.up_scalars,
            "down_scalars": trace.ledger.down_scalars,
            "up_bytes": trace.ledger.up_bytes,
            "down_bytes": trace.ledger.down_bytes,
            "control_bytes": trace.ledger.control_bytes,
            "diverged": trace.diverged,
            "stopped_early": trace.stopped_early,
            "stop_round": trace.stop_round,
        },
        "csv": csv_name,
    }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _rank_key(rc: RunConfig, trace: IterationTrace):
    reached = trace.rounds_to_grad(rc.grad_tol) if rc.grad_tol > 0 else None
    return (
        reached if reached is not None else math.inf,
        trace.rows[-1].grad_norm,
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.transport:
        cfg["transport"] = args.transport
    ds, dataset_desc = build_dataset(cfg["dataset"])
    part = {
        "num_clients": cfg.get("partition", {}).get("num_clients", 1),
        "seed": cfg.get("partition", {}).get("seed", 0),
    }
    obj = {
        "lam": cfg.get("objective", {}).get("lam", 1e-6),
        "regularizer": cfg.get("objective", {}).get("regularizer", "l2"),
    }
    try:
        shards = partition(
            ds,
            part["num_clients"],
            seed=part["seed"],
            lam=obj["lam"],
            regularizer=Regularizer(obj["regularizer"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    planned = expand_runs(cfg)
    if "x0" in cfg and len(cfg["x0"]) != ds.num_features:
        raise ConfigError(
            f"x0 has {len(cfg['x0'])} entries but the dataset has {ds.num_features} features"
        )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wall_clock = cfg.get("wall_clock", False)
    summary_rows = []
    ranked = []
    for i, (label, rc) in enumerate(planned):
        trace = run(rc, shards)
        csv_name = f"{i:02d}_{label}.csv"
        write_trace_csv(out_dir / csv_name, trace, wall_clock)
        write_sidecar(
            out_dir / f"{i:02d}_{label}.json",
            label,
            rc,
            trace,
            dataset_desc,
            part,
            obj,
            csv_name,
        )
        flags = "".join(
            [" [diverged]" if trace.diverged else "", " [stopped]" if trace.stopped_early else ""]
        )
        print(
            f"{label}: rounds={trace.rows[-1].k} f={trace.final_f:.6g} "
            f"grad={trace.rows[-1].grad_norm:.3e} "
            f"scalars={trace.ledger.up_scalars + trace.ledger.down_scalars}{flags}"
        )
        summary_rows.append(
            {
                "label": label,
                "method": rc.method,
                "csv": csv_name,
                "final_f": trace.final_f,
                "final_grad_norm": trace.rows[-1].grad_norm,
                "diverged": trace.diverged,
            }
        )
        ranked.append((_rank_key(rc, trace), label))
    best = min(ranked)[1]
    summary = {
        "problem_key": _problem_key(dataset_desc, part, obj),
        "best": best,
        "best_criterion": "fewest rounds to grad_tol, ties by final gradient norm",
        "runs": summary_rows,
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best: {best}")
    return 0


def _read_trace(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_compare(args) -> int:
    run_dir = Path(args.run_dir)
    sidecars = sorted(p for p in run_dir.glob("*.json") if p.name != "summary.json")
    if not sidecars:
        raise ConfigError(f"no run sidecars found in {run_dir}")
    docs = []
    for p in sidecars:
        try:
            docs.append(json.loads(p.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sidecar {p}: {exc}") from None
    keys = {doc.get("problem_key") for doc in docs}
    if len(keys) != 1:
        raise ConfigError(
            "runs in this directory come from different problems; "
            "compare only supports a single dataset/partition/objective bundle"
        )

    traces = {}
    for doc in docs:
        csv_path = run_dir / doc["csv"]
        try:
            traces[doc["label"]] = _read_trace(csv_path)
        except OSError as exc:
            raise ConfigError(f"cannot read trace {csv_path}: {exc}") from None

    f_best = min(float(r["f"]) for rows in traces.values() for r in rows)

    table = []
    for doc in docs:
        rows = traces[doc["label"]]
        entry = {
            "label": doc["label"],
            "method": doc["method"],
            "final_f": float(rows[-1]["f"]),
            "gap": float(rows[-1]["f"]) - f_best,
            "final_grad": float(rows[-1]["grad_norm"]),
            "diverged": doc["results"]["diverged"],
        }
        for thr in GRAD_THRESHOLDS:
            hit = next((r for r in rows if float(r["grad_norm"]) <= thr), None)
            entry[f"rounds@{thr:g}"] = int(hit["k"]) if hit else None
            entry[f"scalars@{thr:g}"] = (
                int(hit["up_scalars"]) + int(hit["down_scalars"]) if hit else None
            )
        table.append(entry)

    headers = ["label", "method", "final_f", "gap", "final_grad"]
    for thr in GRAD_THRESHOLDS:
        headers += [f"rounds@{thr:g}", f"scalars@{thr:g}"]

    def fmt(entry, h):
        v = entry.get(h)
        if v is None:
            return "-"
        if h in ("final_f", "gap"):
            return f"{v:.6g}"
        if h == "final_grad":
            return f"{v:.3e}"
        return str(v)

    widths = {h: max(len(h), *(len(fmt(e, h)) for e in table)) for h in headers}
    print(f"best objective value: {f_best!r}")
    print("  ".join(h.ljust(widths[h]) for h in headers))
    for entry in sorted(table, key=lambda e: e["final_f"]):
        line = "  ".join(fmt(entry, h).ljust(widths[h]) for h in headers)
        print(line + ("  [diverged]" if entry["diverged"] else ""))

    if args.out:
        out_lines = [",".join(headers)]
        for entry in table:
            out_lines.append(
                ",".join("" if entry.get(h) is None else str(entry.get(h)) for h in headers)
            )
        _atomic_write(Path(args.out), "\n".join(out_lines) + "\n")
    return 0


def cmd_check(args) -> int:
    results = run_all_checks()
    failed = 0
    for r in results:
        mark = "ok" if r.passed else "FAIL"
        print(f"[{mark:>4}] {r.name:<22} {r.seconds:7.2f}s  {r.detail}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2eden",
        description="Distributed second-order optimization laboratory.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the runs described by a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment JSON")
    p_run.add_argument(
        "--out-dir", default="c2eden_results", help="directory for trace CSVs and sidecars"
    )
    p_run.add_argument(
        "--transport",
        choices=["inproc", "tcp"],
        default=None,
        help="override the config's transport",
    )
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate the traces of one run directory")
    p_cmp.add_argument("run_dir", help="directory produced by the run command")
    p_cmp.add_argument("--out", default=None, help="also write the table as CSV")
    p_cmp.set_defaults(fn=cmd_compare)

    p_chk = sub.add_parser("check", help="run the built-in consistency battery")
    p_chk.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
