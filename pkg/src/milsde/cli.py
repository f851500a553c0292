"""Command-line front end.

Verbs: simulate, rate, error-law, lemma-check, limit-sim.  Every run needs
an explicit --seed; there is no silent default because reports must be
reproducible from their config alone.  Each run writes a JSON report and a
CSV data file stamped with a hash of the scientific config fields, plus an
aligned table on stdout.

Exit codes: 0 all checks passed, 1 checks failed, 2 usage or config error,
3 runtime failure.  --threads and --out affect speed and file placement
only; they are excluded from the config hash and the report, so reruns
with different values produce byte-identical reports.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import limits, montecarlo, oracles, schemes
from .model import builtin_models, get_model
from .paths import make_grid, simulate_bundle

SCHEMA_VERSION = "v1"
OUT_DIR_ENV = "MILSDE_OUT_DIR"
VERBS = ("simulate", "rate", "error-law", "lemma-check", "limit-sim")

# slope acceptance bands for the known model/scheme pairs
RATE_BANDS = {
    ("gbm", "milstein"): (-1.15, -0.85),
    ("gbm-drift", "milstein"): (-1.15, -0.85),
    ("gbm", "euler"): (-0.65, -0.35),
    ("gbm-drift", "euler"): (-0.65, -0.35),
    ("det-exp", "milstein"): (-2.05, -1.95),
}

_DEFAULTS = {"fine_factor": 64, "format": "csv", "paths": 1000, "threads": 1,
             "draws": 10000, "fine_count": 4096, "scheme": "milstein",
             "n": 64, "n_list": (16, 32, 64, 128), "ks_threshold": 0.05}

_INT_KEYS = {"n", "paths", "fine_factor", "seed", "draws", "fine_count", "threads"}
_FLOAT_KEYS = {"slope_lo", "slope_hi", "ks_threshold"}
_KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | {"model", "scheme", "case", "n_list",
                                         "out", "format"}


@dataclass(frozen=True)
class ExperimentConfig:
    verb: str
    seed: int
    model: str = ""
    scheme: str = "milstein"
    case: str = ""
    n: int = 64
    n_list: tuple = ()
    paths: int = 1000
    fine_factor: int = 64
    draws: int = 10000
    fine_count: int = 4096
    format: str = "csv"
    ks_threshold: float = 0.05
    slope_band: tuple = None
    # execution-only knobs, excluded from the hash and the report
    out: str = field(default="", compare=False)
    threads: int = field(default=1, compare=False)

    def science_dict(self) -> dict:
        d = {"verb": self.verb, "seed": self.seed}
        if self.verb == "simulate":
            d.update(model=self.model, scheme=self.scheme, n=self.n,
                     paths=self.paths, fine_factor=self.fine_factor)
        elif self.verb == "rate":
            d.update(model=self.model, scheme=self.scheme, n_list=list(self.n_list),
                     paths=self.paths, fine_factor=self.fine_factor)
            if self.slope_band:
                d["slope_band"] = list(self.slope_band)
        elif self.verb == "error-law":
            d.update(model=self.model, n=self.n, paths=self.paths,
                     fine_factor=self.fine_factor, draws=self.draws,
                     fine_count=self.fine_count, ks_threshold=self.ks_threshold)
        elif self.verb == "lemma-check":
            d.update(case=self.case, n=self.n, paths=self.paths,
                     fine_factor=self.fine_factor)
        elif self.verb == "limit-sim":
            d.update(model=self.model, draws=self.draws, fine_count=self.fine_count)
        return d

    def config_hash(self) -> str:
        blob = "\n".join(f"{k}={self.science_dict()[k]}"
                         for k in sorted(self.science_dict()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_config_text(self) -> str:
        """Serialize to the flat key = value file format (lossless: parsing
        the text back under the same verb reproduces this config)."""
        lines = []
        for key, value in sorted(self.science_dict().items()):
            if key == "verb":
                continue
            if key == "slope_band":
                lines.append(f"slope_lo = {value[0]}")
                lines.append(f"slope_hi = {value[1]}")
                continue
            if key == "n_list":
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _read_config_file(path: str) -> dict:
    values, errors = {}, []
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    errors.append(f"{path}:{lineno}: expected 'key = value'")
                    continue
                key, _, value = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in _KNOWN_KEYS:
                    errors.append(f"{path}:{lineno}: unknown key '{key}'")
                    continue
                values[key] = value.strip()
    except OSError as exc:
        errors.append(f"cannot read config file: {exc}")
    if errors:
        raise ConfigError(errors)
    return values


def parse_config(verb: str, flag_values: dict, config_file: str = None) -> ExperimentConfig:
    """Merge file values and flags (flags win) into a validated config.

    Raises ConfigError carrying the full list of validation problems.
    """
    errors = []
    merged = dict(_DEFAULTS)
    if config_file:
        try:
            merged.update(_read_config_file(config_file))
        except ConfigError as exc:
            errors.extend(exc.errors)
    merged.update({k: v for k, v in flag_values.items() if v is not None})

    def to_int(key):
        try:
            return int(merged[key])
        except (TypeError, ValueError):
            errors.append(f"{key} must be an integer, got {merged.get(key)!r}")
            return None

    if verb not in VERBS:
        errors.append(f"unknown verb '{verb}'")
    if merged.get("seed") is None:
        errors.append("--seed is required (reproducibility needs an explicit seed)")
        seed = 0
    else:
        seed = to_int("seed") or 0

    for key in ("paths", "fine_factor", "n", "draws", "fine_count", "threads"):
        merged[key] = to_int(key)
        if merged[key] is not None and merged[key] < 1:
            errors.append(f"{key} must be >= 1")

    n_list = merged.get("n_list", ())
    if isinstance(n_list, str):
        try:
            n_list = tuple(int(v) for v in n_list.replace(",", " ").split())
        except ValueError:
            errors.append(f"n_list must be comma-separated integers, got {n_list!r}")
            n_list = ()
    n_list = tuple(n_list)

    model = merged.get("model") or ""
    if verb in ("simulate", "rate", "error-law", "limit-sim"):
        if not model:
            errors.append("--model is required")
        elif model not in builtin_models():
            errors.append(f"unknown model '{model}'; available: {sorted(builtin_models())}")

    scheme = merged.get("scheme") or "milstein"
    if verb in ("simulate", "rate") and scheme not in montecarlo.scheme_names():
        errors.append(f"unknown scheme '{scheme}'; available: {list(montecarlo.scheme_names())}")

    case = merged.get("case") or ""
    if verb == "lemma-check":
        if not case:
            errors.append("--case is required")
        elif case not in oracles.case_ids():
            errors.append(f"unknown case '{case}'; available: {list(oracles.case_ids())}")

    fine_factor = merged.get("fine_factor") or 1
    if verb == "rate" and n_list:
        fine = max(n_list) * fine_factor
        for n in n_list:
            if fine % n:
                errors.append(f"n={n} does not divide the fine grid of {fine} "
                              f"(= max(n_list) x fine_factor)")
    band = None
    if merged.get("slope_lo") is not None or merged.get("slope_hi") is not None:
        try:
            band = (float(merged["slope_lo"]), float(merged["slope_hi"]))
        except (KeyError, TypeError, ValueError):
            errors.append("slope_lo and slope_hi must both be given as numbers")
    elif verb == "rate":
        band = RATE_BANDS.get((model, scheme))

    fmt = merged.get("format") or "csv"
    if fmt not in ("csv", "json"):
        errors.append(f"format must be csv or json, got {fmt!r}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(verb=verb, seed=seed, model=model, scheme=scheme,
                            case=case, n=merged["n"], n_list=n_list,
                            paths=merged["paths"], fine_factor=fine_factor,
                            draws=merged["draws"], fine_count=merged["fine_count"],
                            format=fmt, ks_threshold=float(merged["ks_threshold"]),
                            slope_band=band, out=merged.get("out") or "",
                            threads=merged["threads"])


def _out_base(config: ExperimentConfig) -> str:
    if config.out:
        base = config.out
        for suffix in (".json", ".csv"):
            if base.endswith(suffix):
                base = base[:-len(suffix)]
        return base
    out_dir = os.environ.get(OUT_DIR_ENV, ".")
    return os.path.join(out_dir, f"milsde-{config.verb}-{config.config_hash()}")


def _write_outputs(config: ExperimentConfig, report: dict, csv_lines) -> tuple:
    """Write {base}.json and {base}.csv; remove partial files on failure."""
    base = _out_base(config)
    json_path, csv_path = base + ".json", base + ".csv"
    written = []
    try:
        os.makedirs(os.path.dirname(os.path.abspath(json_path)), exist_ok=True)
        with open(json_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(json_path)
        with open(csv_path, "w") as fh:
            fh.write(f"# schema=milsde.{config.verb}.{SCHEMA_VERSION}\n")
            fh.write(f"# config_hash={config.config_hash()}\n")
            for line in csv_lines:
                fh.write(line + "\n")
        written.append(csv_path)
    except BaseException:
        for path in written:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise
    return json_path, csv_path


def _report_skeleton(config: ExperimentConfig) -> dict:
    return {"schema": f"milsde.{config.verb}.{SCHEMA_VERSION}",
            "config": config.science_dict(),
            "config_hash": config.config_hash()}


def _run_simulate(config: ExperimentConfig) -> tuple:
    problem = get_model(config.model)
    grid = make_grid(config.n, config.fine_factor)
    runner = {"euler": lambda p, b, n: schemes.euler(p, b, n),
              "milstein": schemes.milstein,
              "milstein54": schemes.milstein_ito54}[config.scheme]
    q = problem.field.dim_q
    lines = ["path_index,t," + ",".join(f"x_{i+1}" for i in range(q))]
    diverged = 0
    chunk = max(1, min(config.paths, 2000))
    for start in range(0, config.paths, chunk):
        idx = np.arange(start, min(start + chunk, config.paths))
        bundle = simulate_bundle(problem.driver, grid, config.seed, idx)
        out = runner(problem, bundle, config.n)
        diverged += int(out.diverged.sum())
        times = np.arange(out.values.shape[1]) / (out.values.shape[1] - 1)
        for b, pidx in enumerate(idx):
            for k, t in enumerate(times):
                vals = ",".join(repr(float(v)) for v in out.values[b, k])
                lines.append(f"{pidx},{float(t)!r},{vals}")
    report = _report_skeleton(config)
    report.update(diverged_paths=diverged, passed=diverged == 0)
    table = [f"simulate: model={config.model} scheme={config.scheme} n={config.n} "
             f"paths={config.paths} diverged={diverged}"]
    return report, lines, table, diverged == 0


def _run_rate(config: ExperimentConfig) -> tuple:
    problem = get_model(config.model)
    rep = montecarlo.run_rate_experiment(problem, config.scheme, config.n_list,
                                         config.paths, config.fine_factor,
                                         config.seed, threads=config.threads)
    passed = True
    band_note = "no slope band configured"
    if config.slope_band:
        lo, hi = config.slope_band
        passed = lo <= rep.rate_fit.slope <= hi
        band_note = f"slope band [{lo}, {hi}]"
    report = _report_skeleton(config)
    report.update(rep.to_dict(), passed=passed, band_note=band_note)
    lines = ["n,rms,rms_se,sup_rms,mean_abs"]
    table = [f"{'n':>6s} {'rms':>12s} {'se':>10s} {'sup rms':>12s}"]
    for p in rep.points:
        lines.append(f"{p.n},{p.rms!r},{p.rms_se!r},{p.sup_rms!r},{p.mean_abs!r}")
        table.append(f"{p.n:6d} {p.rms:12.6g} {p.rms_se:10.3g} {p.sup_rms:12.6g}")
    table.append(f"slope {rep.rate_fit.slope:+.4f}  r^2 {rep.rate_fit.r_squared:.5f}  "
                 f"{band_note}  excluded {rep.excluded_paths}  "
                 f"-> {'PASS' if passed else 'FAIL'}")
    return report, lines, table, passed


def _run_error_law(config: ExperimentConfig) -> tuple:
    problem = get_model(config.model)
    rep = montecarlo.run_error_law(problem, config.n, config.paths, config.draws,
                                   config.fine_factor, config.seed,
                                   fine_count=config.fine_count,
                                   threads=config.threads,
                                   ks_threshold=config.ks_threshold)
    report = _report_skeleton(config)
    report.update(rep.to_dict(), passed=rep.passed)
    lines = ["sample,n_obs,mean,mean_se,variance,variance_se"]
    table = [f"{'sample':>8s} {'mean':>10s} {'variance':>10s} {'var se':>10s}"]
    for name, mom in rep.moments.items():
        lines.append(f"{name},{mom.n},{mom.mean!r},{mom.mean_se!r},"
                     f"{mom.variance!r},{mom.variance_se!r}")
        table.append(f"{name:>8s} {mom.mean:10.5f} {mom.variance:10.5f} "
                     f"{mom.variance_se:10.5f}")
    table.append(f"KS {max(rep.distance.ks):.4f} (threshold {config.ks_threshold}, "
                 f"same-law 95% {rep.distance.same_law_95:.4f})  "
                 f"-> {'PASS' if rep.passed else 'FAIL'}")
    return report, lines, table, rep.passed


def _run_lemma_check(config: ExperimentConfig) -> tuple:
    rows = oracles.run_case(config.case, n=config.n, paths=config.paths,
                            fine_factor=config.fine_factor, seed=config.seed)
    passed = all(r.passed for r in rows)
    report = _report_skeleton(config)
    report.update(rows=[vars(r) for r in rows], passed=passed)
    lines = ["case,subcase,n,estimate,target,se,tolerance,pass"]
    table = [f"{'case':>8s} {'estimate':>12s} {'target':>10s} {'se':>10s} "
             f"{'tol':>9s} pass"]
    for r in rows:
        lines.append(f"{r.case},{r.subcase},{r.n},{r.estimate!r},{r.target!r},"
                     f"{r.se!r},{r.tolerance!r},{r.passed}")
        table.append(f"{r.case:>8s} {r.estimate:12.6f} {r.target:10.6f} "
                     f"{r.se:10.2g} {r.tolerance:9.2g} {'PASS' if r.passed else 'FAIL'}"
                     f"  {r.subcase}")
    return report, lines, table, passed


def _run_limit_sim(config: ExperimentConfig) -> tuple:
    problem = get_model(config.model)
    q = problem.field.dim_q
    lines = ["draw," + ",".join(f"u_{i+1}" for i in range(q))
             + ",qv_mm,qv_nn,qv_nm,qv_nw,qv_mw"]
    u_all = np.empty((config.draws, q))
    fp_sums = np.zeros(5)
    chunk = 1000
    for start in range(0, config.draws, chunk):
        idx = np.arange(start, min(start + chunk, config.draws))
        real = limits.draw_error_limit(problem, config.seed, idx, config.fine_count)
        u_all[idx] = real.u_series[:, -1]
        dm = np.diff(real.m_series[:, :, 0, 0, 0], axis=1)
        dn = np.diff(real.n_series[:, :, 0, 0, 0], axis=1)
        dw = np.diff(real.w[:, :, 0], axis=1)
        fps = np.stack([(dm * dm).sum(1), (dn * dn).sum(1), (dn * dm).sum(1),
                        (dn * dw).sum(1), (dm * dw).sum(1)], axis=1)
        fp_sums += fps.sum(axis=0)
        for b, draw in enumerate(idx):
            uvals = ",".join(repr(float(v)) for v in real.u_series[b, -1])
            fvals = ",".join(repr(float(v)) for v in fps[b])
            lines.append(f"{draw},{uvals},{fvals}")
    mom = montecarlo.estimate_moments(u_all[:, 0])
    report = _report_skeleton(config)
    report.update(passed=True,
                  moments={"limit": vars(mom)},
                  fingerprint_means=dict(zip(("mm", "nn", "nm", "nw", "mw"),
                                             (fp_sums / config.draws).tolist())))
    table = [f"limit-sim: draws={config.draws} U1 mean {mom.mean:+.5f} "
             f"variance {mom.variance:.5f} (se {mom.variance_se:.5f})"]
    return report, lines, table, True


_RUNNERS = {"simulate": _run_simulate, "rate": _run_rate, "error-law": _run_error_law,
            "lemma-check": _run_lemma_check, "limit-sim": _run_limit_sim}


def run(config: ExperimentConfig) -> int:
    """Execute a validated config; write outputs; return the exit code."""
    try:
        report, csv_lines, table, passed = _RUNNERS[config.verb](config)
        json_path, csv_path = _write_outputs(config, report, csv_lines)
    except (ArithmeticError, FloatingPointError, KeyError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    for line in table:
        print(line)
    print(f"report: {json_path}")
    print(f"data:   {csv_path}")
    return 0 if passed else 1


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file; flags override")
    parser.add_argument("--seed", type=int, help="master seed (required)")
    parser.add_argument("--out", help="output base path for .json/.csv")
    parser.add_argument("--threads", type=int, help="worker threads (speed only)")
    parser.add_argument("--format", choices=("csv", "json"))


_VERB_FLAGS = {
    "simulate": (("--model", str), ("--scheme", str), ("--n", int),
                 ("--fine-factor", int), ("--paths", int)),
    "rate": (("--model", str), ("--scheme", str), ("--n-list", str),
             ("--fine-factor", int), ("--paths", int),
             ("--slope-lo", float), ("--slope-hi", float)),
    "error-law": (("--model", str), ("--n", int), ("--paths", int),
                  ("--draws", int), ("--fine-factor", int),
                  ("--fine-count", int), ("--ks-threshold", float)),
    "lemma-check": (("--case", str), ("--n", int), ("--paths", int),
                    ("--fine-factor", int)),
    "limit-sim": (("--model", str), ("--draws", int), ("--fine-count", int)),
}

_VERB_HELP = {
    "simulate": "run a scheme and dump paths",
    "rate": "strong-error rate fit over coupled paths",
    "error-law": "compare n U^n with the simulated limit law",
    "lemma-check": "closed-form constant checks",
    "limit-sim": "sample the limit error law",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="milsde",
                                     description="SDE scheme error experiments")
    sub = parser.add_subparsers(dest="verb")
    for verb, flags in _VERB_FLAGS.items():
        p = sub.add_parser(verb, help=_VERB_HELP[verb])
        for name, typ in flags:
            p.add_argument(name, type=typ)
        _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if not args.verb:
        parser.print_usage(sys.stderr)
        return 2
    flag_values = {k.replace("-", "_"): v for k, v in vars(args).items()
                   if k not in ("verb", "config")}
    try:
        config = parse_config(args.verb, flag_values, config_file=args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    return run(config)


def console_main() -> None:
    sys.exit(main())
