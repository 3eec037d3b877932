"""Command-line entry point.

Subcommands: validate-library, run, simulate, analyze, power, report.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness.runlog import RunLog
from .library import LibraryFormatError, load_library, validate_pool
from .manifest import DESK_MANIFEST, Manifest, ManifestError, execute_manifest
from .report import ANALYSES, PrerequisiteError, emit_tables
from .stats.power import UnsatisfiableDesign, power_required_runs, runs_for_stratum

log = logging.getLogger("narrative_constraints")


def _manifest(args) -> Manifest:
    if args.manifest:
        m = Manifest.load(args.manifest)
    elif args.command == "simulate":
        m = Manifest.from_dict(DESK_MANIFEST)
    else:
        raise ManifestError("--manifest is required")
    if getattr(args, "seed", None) is not None and args.command in ("run", "simulate"):
        m.data["seed"] = args.seed
    if getattr(args, "out", None):
        m.data["output"]["dir"] = str(Path(args.out).resolve())
    return m


def cmd_validate_library(args) -> int:
    try:
        pool = load_library(args.library, strict=False) if args.library else load_library(strict=False)
    except LibraryFormatError as exc:
        for n, msg in exc.errors:
            print(f"error: line {n}: {msg}", file=sys.stderr)
        return 1
    report = validate_pool(pool)
    for msg in report.hard:
        print(f"error: {msg}")
    for msg in report.warnings:
        print(f"warning: {msg}")
    print(f"{len(pool)} constraints, {len(report.hard)} errors, {len(report.warnings)} warnings")
    return 0 if report.ok else 1


def _execute(args, synthetic_only: bool) -> int:
    m = _manifest(args)
    total = len(m.planned_runs())

    def progress(done, todo):
        if done == todo or done % 50 == 0:
            log.info("%d/%d runs", done, todo)

    run_log, summary = execute_manifest(m, resume=args.resume, parallelism=args.parallelism,
                                        synthetic_only=synthetic_only, progress=progress)
    print(json.dumps(dict(summary.to_dict(), run_log=str(run_log.path), planned_total=total), indent=2))
    return 0 if summary.ok else 1


def cmd_run(args) -> int:
    return _execute(args, synthetic_only=False)


def cmd_simulate(args) -> int:
    return _execute(args, synthetic_only=True)


def _records(args, m: Manifest | None):
    path = Path(args.log) if args.log else m.run_log_path
    if not path.exists():
        raise PrerequisiteError("report", f"run log {path} does not exist")
    return RunLog(path).records()


def _report(args, analyses) -> int:
    m = _manifest(args) if args.manifest else None
    if m is None and not args.log:
        raise ManifestError("need --manifest or --log")
    pool = m.pool() if m else load_library()
    out = Path(args.out) if args.out else (m.report_dir if m else Path("report"))
    params = {a: dict(v) for a, v in m["analyses"].items()} if m else {}
    seed = args.seed if args.seed is not None else (m["seed"] if m else 0)
    index = emit_tables(_records(args, m), pool, out, analyses, params, seed)
    for a, info in index["analyses"].items():
        for f in info["files"]:
            print(out / f)
    print(out / "index.json")
    return 0


def cmd_analyze(args) -> int:
    return _report(args, [args.analysis])


def cmd_report(args) -> int:
    if args.analyses:
        analyses = args.analyses
    elif args.manifest:
        m = Manifest.load(args.manifest)
        analyses = [a for a in ANALYSES if m["analyses"][a].get("enabled", True)]
    else:
        analyses = list(ANALYSES)
    return _report(args, analyses)


def cmd_power(args) -> int:
    strata = args.strata or ([args.mu0] if args.mu0 is not None else None)
    n = power_required_runs(args.rr, args.phi, args.K, args.mu0, args.alpha, args.power, strata, args.percentile)
    per = [runs_for_stratum(args.rr, s * (args.K or 1), args.phi, args.alpha, args.power) for s in strata]
    print(json.dumps({"runs_per_group": n, "percentile": args.percentile,
                      "per_stratum": [round(x, 3) for x in per]}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="narrative-constraints", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-library", help="check the constraint library")
    v.add_argument("--library", help="library TSV (default: bundled)")
    v.set_defaults(func=cmd_validate_library)

    for name, func, helptext in (("run", cmd_run, "execute a manifest against its providers"),
                                 ("simulate", cmd_simulate, "execute a manifest with synthetic providers only")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--manifest", required=(name == "run"),
                       help="manifest YAML" + (" (default: built-in desk manifest)" if name == "simulate" else ""))
        r.add_argument("--resume", action="store_true", help="skip runs already in the log")
        r.add_argument("--seed", type=int, help="override the manifest master seed")
        r.add_argument("--parallelism", type=int, help="concurrent runs (default: manifest)")
        r.add_argument("--out", help="output directory (default: manifest output.dir)")
        r.set_defaults(func=func)

    def report_args(sp):
        sp.add_argument("--manifest")
        sp.add_argument("--log", help="run log (default: the manifest's)")
        sp.add_argument("--out", help="report directory")
        sp.add_argument("--seed", type=int, help="seed for permutation-based analyses")

    a = sub.add_parser("analyze", help="run one analysis")
    a.add_argument("analysis", choices=ANALYSES)
    report_args(a)
    a.set_defaults(func=cmd_analyze)

    rp = sub.add_parser("report", help="run every enabled analysis and write the bundle")
    rp.add_argument("--analyses", nargs="+", choices=ANALYSES)
    report_args(rp)
    rp.set_defaults(func=cmd_report)

    pw = sub.add_parser("power", help="runs per group for a target rate ratio")
    pw.add_argument("--rr", type=float, required=True)
    pw.add_argument("--phi", type=float, default=1.0)
    pw.add_argument("--mu0", type=float, default=None, help="baseline mean per run")
    pw.add_argument("--strata", type=float, nargs="+", help="baseline means of several strata")
    pw.add_argument("--K", type=float, default=None, help="budget; makes mu0/strata shares")
    pw.add_argument("--alpha", type=float, default=0.05)
    pw.add_argument("--power", type=float, default=0.80)
    pw.add_argument("--percentile", type=float, default=80.0)
    pw.set_defaults(func=cmd_power)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, PrerequisiteError, UnsatisfiableDesign, LibraryFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
