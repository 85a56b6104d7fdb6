"""``synthinfer`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
Machine-readable output goes to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .combine import CombineError, VarianceRule, combine
from .dp import BudgetError, BudgetLedger, NeighborSemantics, PrivacyBudget, parse_eps
from .estimators import EstimationError, check_estimand, estimate, parse_estimand
from .randkit import CovarianceError, RngStream
from .synthesizers import Method, SynthesisError, SynthesisRequest, generate_m_datasets, write_bundle
from .tabular import Schema, TabularError, infer_schema, load_csv, load_schema

log = logging.getLogger("synthinfer")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
_RUNTIME_ERRORS = (BudgetError, SynthesisError, EstimationError, CovarianceError, TabularError,
                   CombineError, OSError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _epsilon(text: str) -> float:
    try:
        v = parse_eps(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"epsilon must be > 0, got {text}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _level(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a probability, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {v}")
    return v


def _choice(parse):
    def conv(text):
        try:
            return parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return conv


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="synthinfer", description="Differentially private synthetic data and "
                                               "inference from multiple synthetic copies.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate m synthetic copies of a CSV")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--schema", required=True, type=Path)
    s.add_argument("--method", required=True, type=_choice(Method.parse),
                   help="histogram, bayesnet, gaussian or gaussian_ppd")
    s.add_argument("--epsilon", required=True, type=_epsilon, help="total budget, a number or 'inf'")
    s.add_argument("--m", required=True, type=_positive_int)
    s.add_argument("--seed", required=True, type=_seed)
    s.add_argument("--out-dir", required=True, type=Path)
    s.add_argument("--bins", type=_positive_int, default=20, help="bins per continuous column")
    s.add_argument("--degree", type=int, default=1, help="parents per node for bayesnet")
    s.add_argument("--neighbors", choices=[x.value for x in NeighborSemantics],
                   default=NeighborSemantics.REPLACEMENT.value)
    s.add_argument("--out-n", type=_positive_int, default=None, help="rows per copy (default: input rows)")

    i = sub.add_parser("infer", help="combine estimates from synthetic copies")
    i.add_argument("--inputs", required=True, nargs="+", type=Path)
    i.add_argument("--estimand", required=True, help='e.g. "mean:y1", "prop:y1=1", "ols:y1~y2+y3#y2"')
    i.add_argument("--rule", required=True, type=_choice(VarianceRule.parse))
    i.add_argument("--level", type=_level, default=0.95)
    i.add_argument("--schema", type=Path, default=None,
                   help="schema JSON (default: manifest.json next to the inputs, else inferred)")

    m = sub.add_parser("simulate", help="run a Monte Carlo experiment from a TOML config")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--jobs", type=_positive_int, default=1)
    m.add_argument("--seed", type=_seed, default=None, help="overrides the config seed")
    m.add_argument("--out-dir", type=Path, default=None, help="overrides the config out_dir")

    r = sub.add_parser("report", help="rewrite report tables from a metrics.json")
    r.add_argument("--metrics", required=True, type=Path)
    r.add_argument("--out-dir", required=True, type=Path)
    return p


def cmd_synth(args) -> int:
    schema = load_schema(args.schema)
    ds = load_csv(args.input, schema)
    req = SynthesisRequest(args.method, PrivacyBudget(args.epsilon), args.m,
                           bins_per_continuous=args.bins, bn_degree=args.degree, out_n=args.out_n,
                           neighbors=NeighborSemantics(args.neighbors))
    ledger = BudgetLedger(PrivacyBudget(args.epsilon))
    copies = generate_m_datasets(ds, req, RngStream(args.seed), ledger)
    path = write_bundle(copies, args.out_dir, req, ledger, args.seed)
    print(json.dumps({"manifest": str(path), "files": [f"syn_{k}.csv" for k in range(1, args.m + 1)],
                      "epsilon_spent": ledger.spent().epsilon}))
    return EXIT_OK


def _schema_for_inputs(paths, explicit) -> Schema:
    if explicit is not None:
        return load_schema(explicit)
    manifest = Path(paths[0]).parent / "manifest.json"
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("schema"):
            return Schema.from_json(obj["schema"])
    log.info("no schema given; inferring column types from the inputs")
    return infer_schema(paths)


def cmd_infer(args) -> int:
    try:
        est = parse_estimand(args.estimand)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    m = len(args.inputs)
    if m < args.rule.min_m:
        raise UsageError(f"rule {args.rule.value} requires m >= {args.rule.min_m} copies, got m={m}")
    schema = _schema_for_inputs(args.inputs, args.schema)
    check_estimand(schema, est)
    results = [estimate(load_csv(p, schema), est) for p in args.inputs]
    out = combine(results, args.rule, args.level).to_json(est.label)
    out["n_used"] = [r.n_used for r in results]
    print(json.dumps(out, allow_nan=False))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simlab import ConfigError, ExperimentConfig, ExperimentError, read_config, run_experiment, write_report

    try:
        data = read_config(args.config)
        if args.seed is not None:
            data["seed"] = args.seed
        if args.out_dir is not None:
            data["out_dir"] = str(args.out_dir)
        if "seed" not in data:
            raise UsageError("no seed: set seed in the config or pass --seed")
        cfg = ExperimentConfig.from_dict(data)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if cfg.out_dir is None:
        raise UsageError("no output directory: set out_dir in the config or pass --out-dir")
    t0 = time.perf_counter()
    try:
        table = run_experiment(cfg, jobs=args.jobs)
    except ExperimentError as exc:
        raise RuntimeError(str(exc)) from None
    paths = write_report(table, cfg.out_dir)
    wall = time.perf_counter() - t0
    # wall time stays out of the JSON/CSV outputs so reruns are byte-identical
    (Path(cfg.out_dir) / "timing.txt").write_text(f"wall_seconds={wall:.3f}\njobs={args.jobs}\n")
    print(f"simulate: {cfg.B} replications in {wall:.1f}s", file=sys.stderr)
    print(json.dumps({"out_dir": str(cfg.out_dir), "files": sorted(p.name for p in paths)}))
    return EXIT_OK


def cmd_report(args) -> int:
    from .simlab import load_metrics, write_report

    table = load_metrics(args.metrics)
    paths = write_report(table, args.out_dir)
    print(json.dumps({"out_dir": str(args.out_dir), "files": sorted(p.name for p in paths)}))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "infer": cmd_infer, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, *_RUNTIME_ERRORS) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
