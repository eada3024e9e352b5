"""Command-line experiment runner.

    nbplab --config exp.json --out results/ [--threads N] [--seed-override U64]

Exit status: 0 when every asserted check passes, 1 when a check fails,
2 on usage or schema errors.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .experiments import run_kind
from .stats import _jsonable

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_experiment(config_path, out_dir, *, threads: int = 1, seed_override: int | None = None,
                   stream_out=sys.stdout) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_USAGE
    if seed_override is not None:
        cfg = cfg.with_seed(seed_override)
    out = Path(out_dir)
    data = out / "data"
    try:
        data.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE

    outcome = run_kind(cfg, threads=max(1, int(threads)))

    files = {}
    for name, (header, rows) in outcome.tables.items():
        path = data / f"{name}.csv"
        write_csv(path, header, rows)
        files[f"data/{name}.csv"] = _sha256(path)
    summary = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256,
        "passed": outcome.passed,
        "hypotheses": outcome.hypotheses,
        "reports": [r.to_dict() for r in outcome.reports],
        "results": outcome.results,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_path": str(config_path),
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "seed_overridden": seed_override is not None,
        "threads": int(threads),
        "package_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "files": files,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    for r in outcome.reports:
        print(r.line(), file=stream_out)
    if outcome.hypotheses is not None and not outcome.hypotheses["structural_ok"]:
        print("[FAIL] structural hypotheses", file=stream_out)
    return EXIT_OK if outcome.passed else EXIT_CHECK


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nbplab", description="Run a branching-transport experiment.")
    ap.add_argument("--config", required=True, help="JSON experiment file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--threads", type=_positive, default=1, help="worker threads for replicate loops")
    ap.add_argument("--seed-override", type=_u64, default=None, help="replace the seed in the config")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    return run_experiment(args.config, args.out, threads=args.threads, seed_override=args.seed_override)


if __name__ == "__main__":
    sys.exit(main())
