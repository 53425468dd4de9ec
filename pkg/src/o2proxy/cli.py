"""Command-line entry point: ``o2proxy {run,init-bench,verify,report}``.

Exit codes: 0 success, 1 verification mismatch, 2 usage error,
3 runtime error (with a JSON error object on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import initcomm, profile, suites
from .verify import Mode, compare_files

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


def _add_run(sub):
    p = sub.add_parser("run", help="run kernel suites on simulated core groups")
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--suite", choices=suites.SUITES + ("all",))
    p.add_argument("--mode", choices=suites.MODES)
    p.add_argument("--n-cpes", type=int, dest="n_cpes")
    p.add_argument("--n-core-groups", type=int, dest="n_core_groups")
    p.add_argument("--preset", action="append", default=[],
                   help="resolution preset (ne30..ne480 or ts015..ts003); may repeat")
    p.add_argument("--seed", type=int)
    p.add_argument("--evp-subcycles", type=int, dest="evp_subcycles")
    p.add_argument("--out", help="output directory for checkpoints and reports")
    p.set_defaults(func=cmd_run)


def _add_init_bench(sub):
    p = sub.add_parser("init-bench", help="flat vs hierarchical initialization collectives")
    p.add_argument("--config", help="JSON scenario file; flags override it")
    p.add_argument("--n", type=int)
    p.add_argument("--group-size", type=int, dest="group_size")
    p.add_argument("--fanout", type=int)
    p.add_argument("--sizes", choices=("uniform", "random"))
    p.add_argument("--nbytes", type=int)
    p.add_argument("--zero-fraction", type=float, dest="zero_fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-verify", action="store_false", dest="verify", default=None,
                   help="skip the flat oracle run")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="write output here instead of stdout")
    p.set_defaults(func=cmd_init_bench)


def _add_verify(sub):
    p = sub.add_parser("verify", help="compare two checkpoint files or run directories")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mode", default="auto",
                   help="bit | ulp:K | rel:EPS | auto (per-suite class, from the file name)")
    p.set_defaults(func=cmd_verify)


def _add_report(sub):
    p = sub.add_parser("report", help="category/component breakdown of a profile")
    p.add_argument("path", help="profile JSON or run directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--simulated-days", type=float, dest="simulated_days",
                   help="add SDPD/SYPD using the run's total wall time")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="o2proxy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_init_bench(sub)
    _add_verify(sub)
    _add_report(sub)
    return parser


def _overrides(args, names) -> dict:
    return {k: getattr(args, k) for k in names if getattr(args, k) is not None}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_run(args) -> int:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    names = ("suite", "mode", "n_cpes", "n_core_groups", "seed", "evp_subcycles", "out")
    cfg = suites.RunConfig.from_dict({**base, **_overrides(args, names)})
    for preset in args.preset:
        cfg = cfg.with_preset(preset)
    report = suites.run_suites(cfg)
    summary = {
        "status": report["status"],
        "out": str(Path(cfg.out)),
        "suites": {s: [e["compare"]["status"] if e["compare"] else "recorded" for e in r["core_groups"]]
                   for s, r in report["results"].items()},
    }
    print(json.dumps(summary))
    return EXIT_OK if report["status"] == "pass" else EXIT_MISMATCH


def cmd_init_bench(args) -> int:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    names = ("n", "group_size", "fanout", "sizes", "nbytes", "zero_fraction", "seed", "verify")
    sc = initcomm.Scenario.from_dict({**base, **_overrides(args, names)})
    result = initcomm.run_benchmark(sc)
    text = initcomm.stats_to_csv(result) if args.format == "csv" else json.dumps(result, indent=2)
    _emit(text, args.out)
    ok = result.get("delivery_identical", True) and result["gatherv"]["identical"]
    return EXIT_OK if ok else EXIT_MISMATCH


def _mode_for(name: str, requested: str) -> Mode:
    if requested != "auto":
        return Mode.parse(requested)
    suite = name.split(".", 1)[0]
    return suites.check_mode(suite) if suite in suites.SUITES else Mode.bit()


def _pairs(a: Path, b: Path):
    if a.is_dir() != b.is_dir():
        raise ValueError("compare a file with a file, or a directory with a directory")
    if not a.is_dir():
        return [(a, b)]
    names = sorted(p.name for p in a.glob("*.bin"))
    if not names:
        raise FileNotFoundError(f"no checkpoints in {a}")
    missing = [n for n in names if not (b / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing in {b}: {missing}")
    return [(a / n, b / n) for n in names]


def cmd_verify(args) -> int:
    reports = []
    for pa, pb in _pairs(Path(args.a), Path(args.b)):
        rep = compare_files(pa, pb, _mode_for(pa.name, args.mode))
        reports.append({"a": str(pa), "b": str(pb), **rep.to_dict()})
    ok = all(r["status"] == "match" for r in reports)
    print(json.dumps({"status": "match" if ok else "mismatch", "comparisons": reports}, indent=2))
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_report(args) -> int:
    path = Path(args.path)
    prof_path = path / "profile.json" if path.is_dir() else path
    rep = json.loads(prof_path.read_text())
    if args.simulated_days is not None:
        run_report = prof_path.parent / "report.json"
        if not run_report.exists():
            raise FileNotFoundError(f"{run_report} needed for throughput")
        wall = json.loads(run_report.read_text())["timing"]["total_wall_seconds"]
        m = profile.ThroughputMetric(args.simulated_days, wall)
        rep["throughput"] = {"simulated_days": m.simulated_days, "wall_seconds": wall,
                             "sdpd": m.sdpd, "sypd": m.sypd}
    text = profile.report_to_csv(rep) if args.format == "csv" else profile.report_to_json(rep)
    _emit(text, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced to callers as machine-readable JSON
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command},
                  sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
