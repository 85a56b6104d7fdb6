"""Write a :class:`MetricsTable` to disk.

Per estimand (``<slug>`` is a filesystem-safe form of its label)::

    <slug>_bias.csv, <slug>_relbias.csv, <slug>_vmc.csv   rows = method
    <slug>_rab.csv, <slug>_coverage.csv                  rows = (method, rule)

with one column per epsilon.  ``decomposition.csv`` is long format, one
row per (estimand, method, epsilon).  Nothing time-dependent is written,
so reruns with the same config are byte-identical.
"""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

from .experiment import MetricsTable

DECOMPOSITION_HEADER = ["estimand", "method", "epsilon", "u_bar", "b_over_m", "T_p", "V_MC", "n_used"]


def slug(label: str) -> str:
    s = label.replace("~", "_on_").replace("+", "_").replace("#", "__").replace("=", "_eq_")
    return re.sub(r"[^A-Za-z0-9_.-]", "_", s)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _eps_label(e) -> str:
    return "inf" if e == "inf" else repr(float(e))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_report(table: MetricsTable, out_dir) -> list[Path]:
    """Write CSV tables, the decomposition file and JSON manifests; returns
    the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = table.config
    grid = [_eps_label(e) for e in cfg["epsilon_grid"]]
    rules = cfg["rules"]
    written = []

    index = {(c["estimand"], c["method"], _eps_label(c["epsilon"])): c for c in table.cells}

    def value(est, method, e, key, rule=None):
        c = index.get((est, method, e))
        if c is None:
            return None
        v = c[key]
        return v.get(rule) if rule is not None else v

    for est in cfg["estimands"]:
        base = slug(est)
        for key, suffix in (("bias", "bias"), ("relative_bias_pct", "relbias"), ("V_MC", "vmc")):
            rows = [[method] + [value(est, method, e, key) for e in grid] for method in cfg["methods"]]
            path = out / f"{base}_{suffix}.csv"
            _write_csv(path, ["method"] + grid, rows)
            written.append(path)
        for key, suffix in (("RaB_pct", "rab"), ("coverage_pct", "coverage")):
            rows = [[method, rule] + [value(est, method, e, key, rule) for e in grid]
                    for method in cfg["methods"] for rule in rules]
            path = out / f"{base}_{suffix}.csv"
            _write_csv(path, ["method", "rule"] + grid, rows)
            written.append(path)

    rows = []
    for c in table.cells:
        rows.append([c["estimand"], c["method"], _eps_label(c["epsilon"]), c["mean_u_bar"],
                     c["mean_b_over_m"], c["T_p"], c["V_MC"], c["n_used"]])
    path = out / "decomposition.csv"
    _write_csv(path, DECOMPOSITION_HEADER, rows)
    written.append(path)

    orig_rows = [[o["estimand"], o["theta"], o["bias"], o["V_MC"], o["mean_u"], o["RaB_pct"],
                  o["coverage_pct"], o["n_used"]] for o in table.original]
    path = out / "original.csv"
    _write_csv(path, ["estimand", "theta", "bias", "V_MC", "mean_u", "RaB_pct", "coverage_pct",
                      "n_used"], orig_rows)
    written.append(path)

    path = out / "metrics.json"
    _dump_json(table.to_json(), path)
    written.append(path)

    manifest = {
        "config": cfg,
        "seed": cfg["seed"],
        "truths": table.truths,
        "ledger_audit": table.ledger_audit,
        "failures": {f"{c['estimand']}|{c['method']}|{_eps_label(c['epsilon'])}": c["n_failed"]
                     for c in table.cells if c["n_failed"]},
        "files": sorted(p.name for p in written) + ["manifest.json"],
    }
    path = out / "manifest.json"
    _dump_json(manifest, path)
    written.append(path)

    if table.archive is not None:
        path = out / "archive.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for row in table.archive:
                fh.write(json.dumps(row, sort_keys=True, allow_nan=False) + "\n")
        written.append(path)
    return written


def load_metrics(path) -> MetricsTable:
    with open(path, encoding="utf-8") as fh:
        return MetricsTable.from_json(json.load(fh))
