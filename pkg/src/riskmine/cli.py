"""Command-line entry point: ``riskmine {synth,pipeline,stats,report}``.

Exit status: 0 on success, 2 for usage errors and missing inputs, 1 when a
pipeline stage fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import RiskmineError
from .stats import (REPORTED_POWER_N, PowerSpec, bh_adjust, mann_whitney, mann_whitney_from_u, pearson_chi2,
                    power_sample_size, power_sample_size_exact, scheirer_ray_hare, srh_h, welch_t,
                    welch_t_samples, wilcoxon_signed_rank)

SEED_ENV = "RISKMINE_SEED"


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc


def _read_columns(path: str, names: list[str]) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(path)
    with open(p, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    header = set(rows[0]) if rows else set()
    missing = [n for n in names if n not in header]
    if missing:
        raise UsageError(f"{path}: no column(s) {missing}; available: {sorted(header)}")
    return {n: [r[n] for r in rows] for n in names}


def _numeric(values, name) -> np.ndarray:
    try:
        return np.asarray([float(v) for v in values if v != ""], dtype=float)
    except ValueError as exc:
        raise UsageError(f"column {name!r} is not numeric") from exc


def _emit(obj) -> None:
    def clean(v):
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, np.ndarray):
            return [clean(x) for x in v.tolist()]
        if isinstance(v, list):
            return [clean(x) for x in v]
        if isinstance(v, float) and not np.isfinite(v):
            return None
        return v

    print(json.dumps({k: clean(v) for k, v in obj.items()}, sort_keys=True))


def _seed_override(default: int) -> int:
    text = os.environ.get(SEED_ENV)
    if text is None or text == "":
        return default
    try:
        return int(text)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {text!r}") from exc


# -- stats ---------------------------------------------------------------------


def _stats(args) -> int:
    t = args.test
    if t == "mwu":
        if args.csv:
            cols = _read_columns(args.csv, [args.col1, args.col2])
            res = mann_whitney(_numeric(cols[args.col1], args.col1), _numeric(cols[args.col2], args.col2),
                               tie_correction=args.tie_correction)
        elif None not in (args.u, args.n1, args.n2):
            res = mann_whitney_from_u(args.u, args.n1, args.n2)
        else:
            raise UsageError("mwu needs --u/--n1/--n2 or --csv with --col1/--col2")
        _emit(res.to_dict())
    elif t == "welch":
        if args.csv:
            cols = _read_columns(args.csv, [args.col1, args.col2])
            res = welch_t_samples(_numeric(cols[args.col1], args.col1), _numeric(cols[args.col2], args.col2))
        else:
            vals = [args.mean1, args.sd1, args.n1, args.mean2, args.sd2, args.n2]
            if None in vals:
                raise UsageError("welch needs --mean1 --sd1 --n1 --mean2 --sd2 --n2 or --csv")
            res = welch_t(*vals)
        _emit(res.to_dict())
    elif t == "chi2":
        if args.table:
            try:
                table = [[float(x) for x in row.split(",")] for row in args.table.split(";")]
            except ValueError as exc:
                raise UsageError("table must look like '1,2;3,4'") from exc
            if len({len(r) for r in table}) != 1:
                raise UsageError("table rows differ in length")
        elif args.csv:
            cols = _read_columns(args.csv, [args.col1, args.col2])
            a, b = cols[args.col1], cols[args.col2]
            ra, rb = sorted(set(a)), sorted(set(b))
            table = np.zeros((len(ra), len(rb)))
            for x, y in zip(a, b):
                table[ra.index(x), rb.index(y)] += 1
        else:
            raise UsageError("chi2 needs --table or --csv with --col1/--col2")
        _emit(pearson_chi2(table).to_dict())
    elif t == "wilcoxon":
        if args.d:
            d = _floats(args.d)
        elif args.csv:
            if args.col2:
                cols = _read_columns(args.csv, [args.col1, args.col2])
                d = _numeric(cols[args.col1], args.col1) - _numeric(cols[args.col2], args.col2)
            else:
                d = _numeric(_read_columns(args.csv, [args.col1])[args.col1], args.col1)
        else:
            raise UsageError("wilcoxon needs --d or --csv with --col1 [--col2]")
        _emit(wilcoxon_signed_rank(d).to_dict())
    elif t == "srh":
        if args.csv:
            names = [args.value, args.factor_a, args.factor_b]
            cols = _read_columns(args.csv, names)
            results = scheirer_ray_hare(_numeric(cols[args.value], args.value), cols[args.factor_a],
                                        cols[args.factor_b])
            _emit({"effects": [r.to_dict() for r in results]})
        elif None not in (args.ss, args.ms_total, args.df):
            _emit(srh_h(args.ss, args.ms_total, args.df).to_dict())
        else:
            raise UsageError("srh needs --ss/--ms-total/--df or --csv with --value/--factor-a/--factor-b")
    elif t == "bh":
        if args.p:
            p = _floats(args.p)
        elif args.csv:
            p = _numeric(_read_columns(args.csv, [args.col1])[args.col1], args.col1)
        else:
            raise UsageError("bh needs --p or --csv with --col1")
        _emit({"adjusted": bh_adjust(p)})
    elif t == "power":
        spec = PowerSpec(args.odds_ratio, args.alpha, args.power, args.p0, args.r2)
        n = power_sample_size(spec)
        _emit({"n": n, "n_exact": power_sample_size_exact(spec), "reported_n": REPORTED_POWER_N,
               "relative_difference": abs(n - REPORTED_POWER_N) / REPORTED_POWER_N,
               "note": f"Hsieh formula gives {n}; the source study reports approximately {REPORTED_POWER_N}"})
    return 0


# -- synth -------------------------------------------------------------------------


def _atomic_dir(out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def _publish(tmp: Path, out: Path) -> None:
    if out.exists():
        old = out.with_name(f".{out.name}.old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(out, old)
        os.replace(tmp, out)
        shutil.rmtree(old)
    else:
        os.replace(tmp, out)


def _synth(args) -> int:
    from .synth import REFERENCE_EFFECTS, GeneratorConfig, effects_from_json, emit_summary, generate_cohort, \
        write_cohort

    data = {}
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(args.config)
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    gen_dict = data.get("generator", {k: v for k, v in data.items() if k != "effects"})
    gen = GeneratorConfig.from_dict(gen_dict)
    if args.n is not None:
        gen.n_shoppers = args.n
    gen.seed = _seed_override(args.seed if args.seed is not None else gen.seed)
    gen.validate()
    effects = effects_from_json(data.get("effects", []))
    if args.reference_effects:
        effects = list(REFERENCE_EFFECTS)
    cohort, truth = generate_cohort(gen, effects)
    out = Path(args.out)
    tmp = _atomic_dir(out)
    try:
        write_cohort(cohort, truth, gen, effects, tmp)
        emit_summary(cohort).write_csv(tmp / "summary.csv")
        _publish(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"wrote {len(cohort)} shoppers and {len(cohort.events)} events to {out}")
    return 0


# -- pipeline ------------------------------------------------------------------------


def _pipeline(args) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    if not Path(args.config).is_file():
        raise FileNotFoundError(args.config)
    config = PipelineConfig.load(args.config)
    config.seed = _seed_override(config.seed)
    if config.synth is not None and os.environ.get(SEED_ENV):
        config.synth.seed = config.seed
    if args.output:
        config.output = args.output
    for p in (config.roster, config.events, config.catalog, config.taxonomy):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(p)
    out = run_pipeline(config, threads=max(1, args.threads))
    print(f"report bundle written to {out}")
    return 0


# -- report ----------------------------------------------------------------------------


def _report(args) -> int:
    out = Path(args.bundle)
    manifest_path = out / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(str(manifest_path))
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    bad = []
    for name, digest in sorted(manifest["files"].items()):
        actual = hashlib.sha256((out / name).read_bytes()).hexdigest() if (out / name).is_file() else None
        if actual != digest:
            bad.append(name)
    print(f"bundle {out}: {len(manifest['files'])} files, config sha256 {manifest['config_sha256'][:12]}")
    for name in ("selection_table.csv", "diagnostics.csv", "risk_factors.csv", "eval_report.csv",
                 "placebo_experiment.csv"):
        path = out / name
        if path.is_file():
            print(f"\n== {name}")
            print(path.read_text(encoding="utf-8").rstrip())
    spec = PowerSpec()
    n = power_sample_size(spec)
    print(f"\npower analysis: Hsieh formula n = {n}; reported n = {REPORTED_POWER_N}; "
          f"relative difference {abs(n - REPORTED_POWER_N) / REPORTED_POWER_N:.1%}")
    if bad:
        print(f"digest mismatch: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskmine", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskmine {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--config", help="JSON generator config ({'generator': ..., 'effects': [...]})")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n", type=int, help="number of shoppers")
    s.add_argument("--seed", type=int, help="generator seed")
    s.add_argument("--reference-effects", action="store_true", help="plant the ten reference effects")

    s = sub.add_parser("pipeline", help="run the full mining and prediction pipeline")
    s.add_argument("--config", required=True, help="pipeline config JSON")
    s.add_argument("--output", help="override the output directory")
    s.add_argument("--threads", type=int, default=1, help="worker threads for cross-validation folds")

    s = sub.add_parser("stats", help="run one hypothesis test and print JSON")
    s.add_argument("test", choices=["mwu", "welch", "chi2", "wilcoxon", "srh", "bh", "power"])
    s.add_argument("--csv", help="CSV input file")
    s.add_argument("--col1", help="first column")
    s.add_argument("--col2", help="second column")
    s.add_argument("--u", type=float)
    s.add_argument("--n1", type=int)
    s.add_argument("--n2", type=int)
    s.add_argument("--tie-correction", action="store_true")
    for name in ("mean1", "sd1", "mean2", "sd2"):
        s.add_argument(f"--{name}", type=float)
    s.add_argument("--table", help="contingency table, rows separated by ';' (e.g. '1,2;3,4')")
    s.add_argument("--d", help="comma-separated paired differences")
    s.add_argument("--ss", type=float)
    s.add_argument("--ms-total", type=float)
    s.add_argument("--df", type=int)
    s.add_argument("--value", default="value")
    s.add_argument("--factor-a", default="a")
    s.add_argument("--factor-b", default="b")
    s.add_argument("--p", help="comma-separated p-values")
    s.add_argument("--or", dest="odds_ratio", type=float, default=1.49)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--power", type=float, default=0.8)
    s.add_argument("--p0", type=float, default=0.5)
    s.add_argument("--r2", type=float, default=0.8)

    s = sub.add_parser("report", help="verify a report bundle and print its tables")
    s.add_argument("bundle", help="pipeline output directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"synth": _synth, "pipeline": _pipeline, "stats": _stats, "report": _report}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"riskmine: input not found: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"riskmine: {exc}", file=sys.stderr)
        return 2
    except RiskmineError as exc:
        print(f"riskmine: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
