"""Command-line entry point.

Exit codes: 0 success, 2 solver infeasible, 3 numeric divergence,
64 usage error, 66 data error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .analyzer import CSV_COLUMNS, compare_profiles, empirical_profile, profile_rows
from .data import Scaling, gen_synthetic, load_cifar10_binary
from .errors import (CorruptFile, DepthInitError, Divergence, InvalidArgument, NoValidK,
                     UnsupportedConfiguration)
from .scheme import (ConstantScaled, DepthwiseLog, Direction, Distribution, FanMode, Glorot, He,
                     NetworkSpec, build_plan, gain_product, log_inverse_sum, solve_k)
from .train import train

log = logging.getLogger("depthinit")

EXIT_OK, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_USAGE, EXIT_DATA = 0, 2, 3, 64, 66
OUTPUT_DIR_ENV = "DEPTHINIT_OUTPUT_DIR"
SCHEMA_VERSION = 1
SCHEME_NAMES = ("glorot", "he", "const", "depthwise-inc", "depthwise-dec")
DEFAULT_COMPARE = tuple(f"{s}:{d}" for d in ("normal", "uniform")
                        for s in ("he", "const", "depthwise-inc", "depthwise-dec"))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------

def _finite(obj):
    """Replace NaN/inf with None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_finite(report), indent=2, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads(resources.files("depthinit").joinpath("schemas/report.schema.json").read_text())


def make_scheme(name: str, dist: str, variance: float | None, k: float | None, shift: int,
                fan_mode: str):
    if name not in SCHEME_NAMES:
        raise UsageError(f"unknown scheme {name!r}; choose from {', '.join(SCHEME_NAMES)}")
    distribution, fan = Distribution(dist), FanMode(fan_mode)
    if name in ("glorot", "he"):
        if variance is not None or k is not None:
            raise UsageError(f"--variance/--k do not apply to {name}")
        return Glorot(distribution) if name == "glorot" else He(distribution, fan)
    if name == "const":
        if k is not None or variance is None:
            raise UsageError("const needs --variance and takes no --k")
        return ConstantScaled(variance, distribution, fan)
    if (k is None) == (variance is None):
        raise UsageError(f"{name} needs exactly one of --variance or --k")
    direction = Direction.INCREASING if name == "depthwise-inc" else Direction.DECREASING
    return DepthwiseLog(k=k, variance=variance, shift=shift, direction=direction,
                        distribution=distribution, fan_mode=fan)


def _config(args: argparse.Namespace) -> dict:
    embedded = getattr(args, "embedded_config", None)
    if embedded is not None:
        return embedded
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("handler", "embedded_config")}


def _report(kind: str, config: dict, result: dict, timing: dict | None = None) -> dict:
    report = {"kind": kind, "schema_version": SCHEMA_VERSION, "version": __version__,
              "config": config, "result": result}
    if timing is not None:
        report["timing"] = timing
    return report


def _emit(text: str, args: argparse.Namespace, default_name: str) -> None:
    out = args.out
    if out is None and os.environ.get(OUTPUT_DIR_ENV):
        out = str(Path(os.environ[OUTPUT_DIR_ENV]) / default_name)
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text)
    log.info("wrote %s", out)


def _fmt(args: argparse.Namespace) -> str:
    if args.format:
        return args.format
    return "csv" if args.out and args.out.endswith(".csv") else "json"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None or (isinstance(v, float) and not math.isfinite(v))
                         else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _load_data(args: argparse.Namespace):
    if args.data == "synthetic":
        return gen_synthetic(args.data_seed, args.samples, args.dims, args.classes,
                             args.separation, Scaling(args.scaling))
    if args.data.startswith("cifar10:"):
        path = args.data.split(":", 1)[1]
        try:
            return load_cifar10_binary(path, args.limit)
        except OSError as exc:
            raise CorruptFile(str(exc)) from exc
    raise UsageError(f"--data must be 'synthetic' or 'cifar10:PATH', got {args.data!r}")


def _check_training_args(args: argparse.Namespace) -> None:
    if not args.lr > 0:
        raise UsageError(f"--lr must be positive, got {args.lr}")
    if args.epochs < 1 or args.batch < 1:
        raise UsageError("--epochs and --batch must be positive")


def _train_one(args: argparse.Namespace, scheme, data) -> dict:
    spec = NetworkSpec.uniform(args.layers, args.width, input_dim=data.dims,
                               output_dim=data.num_classes)
    result = train(spec, scheme, data, args.epochs, args.lr, args.batch, args.seed)
    result["scheme"] = scheme.to_dict()
    result["spec"] = spec.to_dict()
    result["data"] = data.provenance
    return result


# -- commands ----------------------------------------------------------------

def cmd_solve_k(args: argparse.Namespace) -> int:
    k = solve_k(args.layers, args.width, args.variance, args.shift)
    spec = NetworkSpec.uniform(args.layers, args.width)
    plan = build_plan(spec, DepthwiseLog(variance=args.variance, shift=args.shift))
    result = {
        "K": k,
        "S": log_inverse_sum(args.layers, args.shift),
        "alpha": 2.0 / args.width,
        "V": args.variance,
        "L": args.layers,
        "n": args.width,
        "shift": args.shift,
        "beta": list(plan.beta),
        "gain_product_check": gain_product(plan, spec, "backward"),
    }
    _emit(dumps(_report("solve_k", _config(args), result)), args, "solve_k.json")
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    scheme = make_scheme(args.scheme, args.dist, args.variance, args.k, args.shift, args.fan_mode)
    spec = NetworkSpec.uniform(args.layers, args.width)
    profile = empirical_profile(spec, scheme, args.trials, args.batch, args.seed,
                                inputs=args.inputs, workers=args.workers)
    comparison = compare_profiles(profile)
    rows = profile_rows(profile, comparison)
    if _fmt(args) == "csv":
        text = _csv(CSV_COLUMNS, rows)
    else:
        result = {"columns": list(CSV_COLUMNS), "rows": rows, "profile": profile.to_dict(),
                  "comparison": comparison.to_dict()}
        text = dumps(_report("profile", _config(args), result))
    _emit(text, args, f"profile-{args.scheme}-{args.seed}.{_fmt(args)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    _check_training_args(args)
    scheme = make_scheme(args.scheme, args.dist, args.variance, args.k, args.shift, args.fan_mode)
    data = _load_data(args)
    start = time.perf_counter()
    result = _train_one(args, scheme, data)
    timing = {"wall_clock_seconds": time.perf_counter() - start}
    if _fmt(args) == "csv":
        rows = [[0, result["initial"]["loss"], result["initial"]["accuracy"]]]
        rows += [[e["epoch"], e["loss"], e["accuracy"]] for e in result["epochs"]]
        text = _csv(("epoch", "loss", "accuracy"), rows)
    else:
        text = dumps(_report("train", _config(args), result, timing))
    _emit(text, args, f"train-{args.scheme}-{args.seed}.{_fmt(args)}")
    return EXIT_OK


def _parse_entry(entry: str, default_dist: str) -> tuple[str, str]:
    name, _, dist = entry.strip().partition(":")
    dist = dist or default_dist
    if dist not in ("normal", "uniform"):
        raise UsageError(f"bad distribution in scheme entry {entry!r}")
    return name, dist


def cmd_compare(args: argparse.Namespace) -> int:
    _check_training_args(args)
    entries = [e for e in args.schemes.split(",") if e.strip()]
    if not entries:
        raise UsageError("--schemes is empty")
    schemes = []
    for entry in entries:
        name, dist = _parse_entry(entry, args.dist)
        variance = k = None
        if name == "const":
            variance = args.variance
        elif name.startswith("depthwise"):
            if args.k is not None:
                k = args.k
            else:
                variance = args.variance
        schemes.append(make_scheme(name, dist, variance, k, args.shift, args.fan_mode))
    data = _load_data(args)

    rows, codes = [], []
    start = time.perf_counter()
    for entry, scheme in zip(entries, schemes):
        try:
            report = _train_one(args, scheme, data)
            rows.append({"scheme": entry, "status": "ok", "error": None, "report": report})
            codes.append(EXIT_OK)
        except (Divergence, NoValidK, UnsupportedConfiguration) as exc:
            log.warning("scheme %s failed: %s", entry, exc)
            rows.append({"scheme": entry, "status": "failed", "error": str(exc), "report": None})
            codes.append(EXIT_DIVERGED if isinstance(exc, Divergence) else EXIT_INFEASIBLE)
    ok = [i for i, r in enumerate(rows) if r["status"] == "ok"]
    ranking = sorted(ok, key=lambda i: (rows[i]["report"]["epochs"][-1]["loss"], i))
    result = {
        "rows": rows,
        "ranking": [{"position": i, "scheme": rows[i]["scheme"],
                     "final_loss": rows[i]["report"]["epochs"][-1]["loss"]} for i in ranking],
    }
    timing = {"wall_clock_seconds": time.perf_counter() - start}
    _emit(dumps(_report("compare", _config(args), result, timing)), args,
          f"compare-{args.seed}.json")
    return EXIT_OK if ok else codes[0]


def cmd_rerun(args: argparse.Namespace) -> int:
    """Re-execute the command recorded in a report's embedded config."""
    try:
        report = json.loads(Path(args.report).read_text())
        config = copy.deepcopy(report["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise CorruptFile(f"cannot read report config from {args.report}: {exc}") from exc
    handler = COMMANDS.get(config.get("command"))
    if handler is None:
        raise UsageError(f"report has unknown command {config.get('command')!r}")
    ns = argparse.Namespace(**config)
    ns.out = args.out
    # echo the original config verbatim, including its original output sink
    ns.embedded_config = report["config"]
    return handler(ns)


def cmd_schema(args: argparse.Namespace) -> int:
    sys.stdout.write(json.dumps(load_schema(), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"solve-k": cmd_solve_k, "profile": cmd_profile, "train": cmd_train,
            "compare": cmd_compare, "rerun": cmd_rerun, "schema": cmd_schema}


# -- parser ------------------------------------------------------------------

def _scheme_flags(p: argparse.ArgumentParser, variance_default=None) -> None:
    p.add_argument("--layers", type=int, default=54, help="network depth L")
    p.add_argument("--width", type=int, default=64, help="hidden width n")
    p.add_argument("--variance", type=float, default=variance_default,
                   help="target network variance V")
    p.add_argument("--k", type=float, default=None, help="explicit K for depthwise schemes")
    p.add_argument("--shift", type=int, default=0, help="log-base shift constant c")
    p.add_argument("--dist", choices=("normal", "uniform"), default="normal")
    p.add_argument("--fan-mode", choices=("fan_in", "fan_out"), default="fan_out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (stdout if omitted)")
    p.add_argument("--format", choices=("json", "csv"), default=None)


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="synthetic", help="'synthetic' or 'cifar10:PATH'")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--limit", type=int, default=None, help="max CIFAR-10 records")
    p.add_argument("--samples", type=int, default=2000, help="synthetic sample count")
    p.add_argument("--dims", type=int, default=64, help="synthetic feature count")
    p.add_argument("--classes", type=int, default=10, help="synthetic class count")
    p.add_argument("--separation", type=float, default=10.0, help="synthetic class separation")
    p.add_argument("--scaling", choices=[s.value for s in Scaling], default="zero_one")
    p.add_argument("--data-seed", type=int, default=0, help="synthetic data seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthinit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("solve-k", help="solve K for a target network variance")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--variance", type=float, required=True)
    p.add_argument("--shift", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_solve_k, format="json")

    p = sub.add_parser("profile", help="theoretical vs Monte Carlo variance profile")
    p.add_argument("--scheme", choices=SCHEME_NAMES, required=True)
    _scheme_flags(p)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--inputs", choices=("normal", "zero_one"), default="normal")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("train", help="train one scheme and report")
    p.add_argument("--scheme", choices=SCHEME_NAMES, required=True)
    _scheme_flags(p)
    _training_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("compare", help="train several schemes on identical data and seeds")
    p.add_argument("--schemes", default=",".join(DEFAULT_COMPARE),
                   help="comma list of name[:dist] entries")
    _scheme_flags(p, variance_default=22.0)
    _training_flags(p)
    p.set_defaults(handler=cmd_compare, format="json")

    p = sub.add_parser("rerun", help="re-execute a report from its embedded config")
    p.add_argument("report")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_rerun)

    p = sub.add_parser("schema", help="print the JSON report schema")
    p.set_defaults(handler=cmd_schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"depthinit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoValidK, UnsupportedConfiguration) as exc:
        print(f"depthinit: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Divergence as exc:
        print(f"depthinit: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CorruptFile as exc:
        print(f"depthinit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidArgument, DepthInitError) as exc:
        print(f"depthinit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
