"""Command-line entry point: ``social-sampler <command> [options]``.

Every command writes its outputs plus ``manifest.json`` into ``--out``.
The manifest records the fully resolved parameters, so
``social-sampler replay --manifest DIR/manifest.json --out NEW`` reproduces
the primary outputs byte for byte.

Exit codes: 0 success, 2 invalid input, 3 resource cap exceeded,
4 numeric or internal failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import math
import os
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .backend import BACKEND
from .errors import CapExceededError, InvalidInputError, NumericError
from .evaluation import (
    DEFAULT_PERF_BINS,
    DEFAULT_POP_BINS,
    SCHEMES,
    Bin,
    CVScheme,
    binned_interaction_summary,
    cross_validate,
    ols_interaction_regression,
    write_binned_csv,
    write_report_csv,
)
from .inference import fit, gamma_profile, predict_new_mimickers, rank_traders, skill_credible_interval
from .models import FAMILIES
from .panel import PanelDataset
from .pipeline import (
    METRICS,
    PerformanceMetricSpec,
    SyntheticMarketConfig,
    build_panel,
    compute_performance,
    emit_trades,
    generate_synthetic_market,
    impute_missing_parents,
    parse_trades,
    reconstruct_popularity,
)
from .simulator import SweepGrid, run_sweep, sweep_document, write_sweep_csv

SCHEMA_VERSION = 1
DEFAULT_SEED = 0
EXIT_OK, EXIT_INPUT, EXIT_CAP, EXIT_INTERNAL = 0, 2, 3, 4

BIN_PRESETS = {
    "default": (DEFAULT_POP_BINS, DEFAULT_PERF_BINS),
    "low": ((Bin.point(0), Bin.point(1)), DEFAULT_PERF_BINS),
}


class Run:
    """Collects inputs, outputs and diagnostics for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.diagnostics: dict = {}

    def input(self, path) -> Path:
        path = Path(path)
        try:
            self.inputs[str(path.resolve())] = _sha256(path)
        except FileNotFoundError:
            raise InvalidInputError(f"input file not found: {path}") from None
        return path

    def output(self, name: str) -> Path:
        path = self.out / name
        self.outputs.append(name)
        return path

    def write_json(self, name: str, doc) -> None:
        with open(self.output(name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InvalidInputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return data


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("SOCIAL_SAMPLER_THREADS", "")
        try:
            value = int(env) if env else 0
        except ValueError:
            raise InvalidInputError(f"SOCIAL_SAMPLER_THREADS must be an integer, got {env!r}") from None
    if value < 0:
        raise InvalidInputError(f"--threads must be >= 0, got {value}")
    return value or (os.cpu_count() or 1)


def _merge(config: dict, overrides: dict, allowed: set[str], command: str) -> dict:
    unknown = set(config) - allowed
    if unknown:
        raise InvalidInputError(f"unknown {command} config fields: {sorted(unknown)}")
    merged = dict(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _csv_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidInputError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _abspath(value):
    return None if value is None else str(Path(value).resolve())


# -- resolution: CLI flags + config file -> parameter dict --------------------


def resolve_simulate(args, config: dict) -> dict:
    grid = dict(config)
    if args.seed is not None:
        grid["seed"] = args.seed
    grid.setdefault("seed", DEFAULT_SEED)
    if args.repetitions is not None:
        grid["repetitions"] = args.repetitions
    return {"grid": SweepGrid.from_dict(grid).to_dict()}


def resolve_synth(args, config: dict) -> dict:
    market = dict(config)
    if args.seed is not None:
        market["seed"] = args.seed
    market.setdefault("seed", DEFAULT_SEED)
    return {"market": SyntheticMarketConfig.from_dict(market).to_dict()}


def resolve_ingest(args, config: dict) -> dict:
    p = _merge(
        config,
        {"trades": args.trades, "metric": args.metric, "window": args.window, "impute": args.impute or None,
         "liquidate": args.liquidate or None, "rates": args.rates},
        {"trades", "metric", "window", "impute", "liquidate", "rates"},
        "ingest",
    )
    if "trades" not in p:
        raise InvalidInputError("ingest needs --trades")
    p = {"metric": "roi", "window": 30, "impute": False, "liquidate": False, "rates": None, **p}
    PerformanceMetricSpec(p["metric"], p["window"], not p["liquidate"])
    p["trades"], p["rates"] = _abspath(p["trades"]), _abspath(p["rates"])
    return p


def resolve_fit(args, config: dict) -> dict:
    profile = None if args.gamma_profile is None else _csv_floats(args.gamma_profile, "--gamma-profile")
    p = _merge(
        config,
        {"panel": args.panel, "family": args.family, "gamma": args.gamma, "gamma_profile": profile,
         "trades": args.trades, "skill_intervals": args.skill_intervals or None, "top": args.top,
         "level": args.level},
        {"panel", "family", "gamma", "gamma_profile", "trades", "skill_intervals", "top", "level"},
        "fit",
    )
    if "panel" not in p:
        raise InvalidInputError("fit needs --panel")
    p = {"family": "social_sampling", "gamma": 1.0, "gamma_profile": None, "trades": None,
         "skill_intervals": False, "top": 10, "level": 0.95, **p}
    if p["family"] not in FAMILIES:
        raise InvalidInputError(f"unknown family {p['family']!r}; expected one of {sorted(FAMILIES)}")
    if p["skill_intervals"] and p["trades"] is None:
        raise InvalidInputError("--skill-intervals needs --trades")
    p["panel"], p["trades"] = _abspath(p["panel"]), _abspath(p["trades"])
    return p


def resolve_evaluate(args, config: dict) -> dict:
    families = None if args.families is None else [f.strip() for f in args.families.split(",") if f.strip()]
    schemes = None
    if args.scheme is not None:
        schemes = list(SCHEMES) if args.scheme == "all" else [_scheme_name(args.scheme)]
    p = _merge(
        config,
        {"panel": args.panel, "families": families, "schemes": schemes, "fraction": args.fraction,
         "folds": args.folds, "seed": args.seed, "bins": args.bins},
        {"panel", "families", "schemes", "fraction", "folds", "seed", "bins"},
        "evaluate",
    )
    if "panel" not in p:
        raise InvalidInputError("evaluate needs --panel")
    p = {"families": sorted(FAMILIES), "schemes": list(SCHEMES), "fraction": 0.10, "folds": 10,
         "seed": DEFAULT_SEED, "bins": "default", **p}
    for f in p["families"]:
        if f not in FAMILIES:
            raise InvalidInputError(f"unknown family {f!r}; expected one of {sorted(FAMILIES)}")
    for s in p["schemes"]:
        CVScheme(s, p["fraction"], p["folds"], p["seed"])
    if p["bins"] not in BIN_PRESETS:
        raise InvalidInputError(f"unknown bin preset {p['bins']!r}; expected one of {sorted(BIN_PRESETS)}")
    p["panel"] = _abspath(p["panel"])
    return p


_SCHEME_ALIASES = {"user": "by_user_10fold", "day": "by_day_10fold", "temporal": "temporal_last_fraction"}


def _scheme_name(text: str) -> str:
    name = _SCHEME_ALIASES.get(text, text)
    if name not in SCHEMES:
        raise InvalidInputError(f"unknown scheme {text!r}; expected one of {sorted(_SCHEME_ALIASES)} or {list(SCHEMES)}")
    return name


# -- execution: parameter dict -> output files --------------------------------


def run_simulate(params: dict, run: Run, threads: int) -> None:
    grid = SweepGrid.from_dict(params["grid"])
    rows = run_sweep(grid, threads=threads)
    write_sweep_csv(rows, run.output("sweep.csv"))
    run.write_json("sweep.json", sweep_document(grid, rows))


def run_synth(params: dict, run: Run, threads: int) -> None:
    market = generate_synthetic_market(SyntheticMarketConfig.from_dict(params["market"]))
    emit_trades(market.trades, run.output("trades.csv"))
    market.panel.to_csv(run.output("panel.csv"))
    run.write_json("truth.json", market.truth)


def _read_rates(path) -> dict:
    rates = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["asset", "date", "rate"]:
            raise InvalidInputError(f"{path}: rate table header must be asset,date,rate")
        for lineno, row in enumerate(reader, start=2):
            try:
                asset, day, rate = row
                rates[(asset, dt.date.fromisoformat(day))] = float(rate)
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
    return rates


def run_ingest(params: dict, run: Run, threads: int) -> None:
    report = parse_trades(run.input(params["trades"]))
    records = report.records
    run.diagnostics = {"rows": report.total_rows, "malformed": report.malformed,
                       "quarantined": len(report.quarantined), "messages": report.diagnostics}
    if params["impute"]:
        imp = impute_missing_parents(records)
        records = imp.records
        run.diagnostics.update(imputed=len(imp.imputed_ids), imputation_failures=imp.failures)
    rates = _read_rates(run.input(params["rates"])) if params["rates"] else None
    spec = PerformanceMetricSpec(params["metric"], params["window"], not params["liquidate"])
    popularity = reconstruct_popularity(records)
    performance = compute_performance(records, spec, popularity.calendar, rates)
    run.diagnostics["unresolved_mirrors"] = popularity.unresolved
    build_panel(popularity, performance).to_csv(run.output("panel.csv"))


def _daily_profits(records) -> dict[int, list[float]]:
    days: dict[int, dict] = defaultdict(lambda: defaultdict(list))
    for r in records:
        if not r.is_copy:
            days[r.user_id][r.close_date].append(r.net_profit)
    return {u: [math.fsum(v) for _, v in sorted(d.items())] for u, d in days.items()}


def run_fit(params: dict, run: Run, threads: int) -> None:
    panel = PanelDataset.read_csv(run.input(params["panel"]))
    result = fit(params["family"], panel, gamma=params["gamma"])
    run.write_json("fit.json", {"schema_version": SCHEMA_VERSION, **result.to_dict()})
    if params["gamma_profile"] is not None:
        points = gamma_profile(panel, params["gamma_profile"])
        with open(run.output("gamma_profile.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("gamma", "log_likelihood", "eta", "converged", "error"))
            for pt in points:
                w.writerow((repr(pt.gamma), _num(pt.log_likelihood), _num(pt.eta), pt.converged, pt.error or ""))
    if params["skill_intervals"]:
        report = parse_trades(run.input(params["trades"]))
        profits = _daily_profits(report.records)
        ranking = rank_traders(profits)
        with open(run.output("skill_intervals.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("rank", "user_id", "score", "good_days", "bad_days", "lower", "upper", "level"))
            for rank, (user, score) in enumerate(ranking[: params["top"]], start=1):
                x = np.asarray(profits[user])
                s, f = int(np.sum(x > 0)), int(np.sum(x < 0))
                ci = skill_credible_interval(s, f, params["level"])
                w.writerow((rank, user, score, s, f, repr(ci.lower), repr(ci.upper), repr(ci.level)))


def run_evaluate(params: dict, run: Run, threads: int) -> None:
    panel = PanelDataset.read_csv(run.input(params["panel"]))
    reports = []
    for kind in params["schemes"]:
        scheme = CVScheme(kind, params["fraction"], params["folds"], params["seed"])
        reports.append(cross_validate(params["families"], panel, scheme))
    write_report_csv(reports, run.output("report.csv"))
    run.write_json("report.json", {"schema_version": SCHEMA_VERSION, "reports": [_clean(r.to_dict()) for r in reports]})
    run.diagnostics["skipped_folds"] = sum(len(r.skipped_folds) for r in reports)

    predictions = None
    if "social_sampling" in params["families"]:
        predictions = predict_new_mimickers(fit("social_sampling", panel).model, panel)
    pop_bins, perf_bins = BIN_PRESETS[params["bins"]]
    subset = panel
    if params["bins"] == "low":
        subset = panel.with_mask(panel.prev_popularity <= 1)
    write_binned_csv(binned_interaction_summary(subset, predictions, pop_bins, perf_bins), run.output("binned.csv"))
    run.write_json("regression.json", {"schema_version": SCHEMA_VERSION,
                                       **ols_interaction_regression(panel).to_dict()})


def _num(value: float) -> str:
    return "" if not math.isfinite(value) else repr(float(value))


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


COMMANDS: dict[str, tuple[Callable, Callable]] = {
    "simulate": (resolve_simulate, run_simulate),
    "synth": (resolve_synth, run_synth),
    "ingest": (resolve_ingest, run_ingest),
    "fit": (resolve_fit, run_fit),
    "evaluate": (resolve_evaluate, run_evaluate),
}


def execute(command: str, params: dict, out: Path, threads: int, seed: int | None) -> dict:
    """Run a resolved command and write its manifest; returns the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    run = Run(out)
    started = time.time()
    COMMANDS[command][1](params, run, threads)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": params,
        "seed": seed,
        "version": __version__,
        "backend": BACKEND,
        "threads": threads,
        "inputs": run.inputs,
        "outputs": run.outputs,
        "diagnostics": run.diagnostics,
        "started": dt.datetime.fromtimestamp(started, dt.timezone.utc).isoformat(),
        "duration_seconds": round(time.time() - started, 6),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_clean(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _seed_of(command: str, params: dict):
    if command == "simulate":
        return params["grid"]["seed"]
    if command == "synth":
        return params["market"]["seed"]
    return params.get("seed")


def replay(manifest_path, out: Path, threads: int) -> dict:
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read manifest {manifest_path}: {exc}") from None
    command = manifest.get("command")
    if command not in COMMANDS:
        raise InvalidInputError(f"manifest names unknown command {command!r}")
    params = manifest["config"]
    for path, digest in manifest.get("inputs", {}).items():
        if Path(path).exists() and _sha256(Path(path)) != digest:
            raise InvalidInputError(f"input {path} changed since the recorded run")
    return execute(command, params, out, threads, manifest.get("seed"))


# -- argument parsing ---------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="JSON config file")
    parser.add_argument("--out", metavar="DIR", default=default, help="output directory (default: .)")
    parser.add_argument("--seed", metavar="U64", type=int, default=default)
    parser.add_argument("--threads", metavar="N", type=int, default=default,
                        help="worker threads, 0 = auto (env SOCIAL_SAMPLER_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="social-sampler", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} backend)")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an agent-simulation sweep")
    p.add_argument("--repetitions", type=int)

    p = sub.add_parser("synth", help="generate a synthetic trade log with ground truth")

    p = sub.add_parser("ingest", help="build a panel from a trade log")
    p.add_argument("--trades", metavar="CSV")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--window", type=int)
    p.add_argument("--impute", action="store_true", help="impute missing parent trades first")
    p.add_argument("--liquidate", action="store_true", help="mark open trades to the day's last rate")
    p.add_argument("--rates", metavar="CSV", help="external rate table (asset,date,rate)")

    p = sub.add_parser("fit", help="maximum-likelihood fit of one model family")
    p.add_argument("--panel", metavar="CSV")
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--gamma", type=float, help="fixed popularity exponent for social_sampling")
    p.add_argument("--gamma-profile", metavar="LIST", help="comma-separated gamma grid")
    p.add_argument("--skill-intervals", action="store_true", help="rank traders and report skill intervals")
    p.add_argument("--trades", metavar="CSV", help="trade log for --skill-intervals")
    p.add_argument("--top", type=int)
    p.add_argument("--level", type=float)

    p = sub.add_parser("evaluate", help="cross-validated model comparison, binned summary, OLS")
    p.add_argument("--panel", metavar="CSV")
    p.add_argument("--families", metavar="LIST", help="comma-separated families (default: all)")
    p.add_argument("--scheme", help="user, day, temporal, or all")
    p.add_argument("--fraction", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--bins", choices=sorted(BIN_PRESETS))

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("--manifest", metavar="PATH", required=True)

    for name, action in sub.choices.items():
        _global_flags(action, suppress=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise InvalidInputError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        threads = _threads(args.threads)
        out = Path(args.out or ".")
        if args.command == "replay":
            replay(args.manifest, out, threads)
        else:
            resolve = COMMANDS[args.command][0]
            params = resolve(args, _load_config(args.config))
            execute(args.command, params, out, threads, _seed_of(args.command, params))
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except MemoryError as exc:
        print(f"error: out of memory: {exc}", file=sys.stderr)
        return EXIT_CAP
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any other failure is internal
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
