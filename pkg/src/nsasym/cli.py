"""Command line: nsasym run | inspect | verify."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_config
from .field_core import load_field, read_header
from .solver import SolverError
from .verify import VerificationError

EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 1, 2, 3


def cmd_run(args) -> int:
    from .runner import analyse, compare_golden, golden_metrics, run_simulation, save_trajectory

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output or cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    (out / "config.cfg").write_text(cfg.source_text)
    try:
        traj = run_simulation(cfg)
    except SolverError as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    save_trajectory(traj, out / "trajectory", cfg.digest)
    try:
        _, _, report = analyse(traj, cfg, out)
    except VerificationError as exc:
        print(f"verification aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK
    _print_checks(report)
    if args.write_golden:
        Path(args.write_golden).write_text(json.dumps(
            {"config_hash": cfg.digest, "metrics": golden_metrics(report)}, indent=1, sort_keys=True) + "\n")
    status = 0 if report["passed"] else EXIT_CHECK
    if cfg.golden:
        problems = compare_golden(report, Path(cfg.golden))
        for p in problems:
            print(f"golden mismatch: {p}")
        if problems:
            status = EXIT_CHECK
    return status


def cmd_verify(args) -> int:
    from .runner import analyse, load_trajectory

    run = Path(args.run_dir)
    try:
        cfg = parse_config((run / "config.cfg").read_text())
        traj = load_trajectory(run / "trajectory")
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = run / "verify"
    try:
        _, _, report = analyse(traj, cfg, out)
    except VerificationError as exc:
        print(f"verification aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK
    _print_checks(report)
    status = 0 if report["passed"] else EXIT_CHECK
    for name in ("coefficients.json", "report.json"):
        a, b = run / name, out / name
        if a.exists() and a.read_bytes() != b.read_bytes():
            print(f"not reproducible: {name} differs from the persisted run")
            status = EXIT_CHECK
    return status


def _print_checks(report: dict) -> None:
    for c in report["checks"]:
        tag = "PASS" if c["pass"] else "FAIL"
        if not c["asserted"]:
            tag = "info"
        print(f"[{tag}] {c['name']}: {c['value']:.6g} ({c['bound']})")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        print(f"error: {path} does not exist", file=sys.stderr)
        return EXIT_CONFIG
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if "coefficients" in data:
            rows = []
            for key, v in data["coefficients"].items():
                kind, l, beta = key.split("|")
                l = int(l.split("=")[1])
                beta = tuple(int(x) for x in beta.split("=")[1].split(","))
                rows.append((l, sum(beta), beta, kind, v))
            rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
            print("l,beta,kind,value,error,tail_model")
            for l, _, beta, kind, v in rows:
                vals = " ".join(f"{x:.10g}" for x in v["value"])
                print(f"{l},{' '.join(map(str, beta))},{kind},{vals},{v['error']:.3g},{v['tail_model']}")
            return 0
        if "checks" in data and (args.fits or not args.coeffs):
            print("label,q,a,b,c,rms")
            for f in data["fits"]:
                print(f"{f['label']},{f['q']},{f['a']:.6g},{f['b']},{f['c']:.6g},{f['rms']:.3g}")
            return 0
        print(json.dumps(data, indent=1, sort_keys=True))
        return 0
    try:
        head = read_header(path)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.field:
        for k in ("n", "N", "L", "rank", "t"):
            print(f"{k}={head[k]}")
        return 0
    f = load_field(path)
    vals = f.values.reshape((-1,) + f.grid.shape)
    mid = f.grid.N // 2
    idx = [mid] * f.grid.n
    idx[args.axis] = slice(None)
    print("x," + ",".join(f"c{i}" for i in range(vals.shape[0])))
    for i, x in enumerate(f.grid.axis):
        idx[args.axis] = i
        print(f"{x:.6g}," + ",".join(f"{v[tuple(idx)]:.10g}" for v in vals))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsasym", description="Large-time expansion experiments for planar Navier-Stokes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate, extract coefficients, build profiles and verify")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the output directory")
    r.add_argument("--write-golden", metavar="PATH", help="write the summary metrics as a golden file")
    r.set_defaults(func=cmd_run)
    i = sub.add_parser("inspect", help="dump an artifact")
    i.add_argument("path")
    i.add_argument("--field", action="store_true", help="print a slice through the box centre")
    i.add_argument("--axis", type=int, default=0)
    i.add_argument("--coeffs", action="store_true")
    i.add_argument("--fits", action="store_true")
    i.set_defaults(func=cmd_inspect)
    v = sub.add_parser("verify", help="recompute the report from a persisted run")
    v.add_argument("run_dir")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
