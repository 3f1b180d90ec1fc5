"""Command-line runner for the experiment suites.

Exit codes: 0 success, 1 input error, 2 a diagnostic check failed.
"""

from __future__ import annotations

import argparse
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .model import InvalidSpecError
from .montecarlo import thread_count
from .serialization import SUITES, ConfigError, config_to_dict, dumps, load_config
from .suites import default_config, run_suite

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="mfteams", description="Run mean-field team experiment suites.")
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--suite", help=f"suite name ({', '.join(SUITES)}) or 'all'; selects the shipped default config when --config is absent")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--samples", type=_positive, help="override the Monte Carlo sample count")
    p.add_argument("--out", type=Path, help="output directory (overrides output_path)")
    p.add_argument("--format", choices=("csv", "structured", "both"), default="both")
    p.add_argument("--list", action="store_true", help="list suites and exit")
    p.add_argument("--quiet", action="store_true")
    return p


def _configs(args):
    if args.config is not None:
        cfg = load_config(args.config)
        if args.suite and args.suite != cfg.suite:
            raise ConfigError(f"--suite {args.suite} conflicts with the config's suite {cfg.suite}", "suite")
        return [cfg]
    if not args.suite:
        raise ConfigError("give --config or --suite")
    names = SUITES if args.suite == "all" else [args.suite]
    for n in names:
        if n not in SUITES:
            raise ConfigError(f"unknown suite '{n}'; valid suites: {', '.join(SUITES)}", "suite")
    return [default_config(n) for n in names]


def emit(result, cfg, out_dir, fmt="both", elapsed=None, config_source=None):
    """Write ``<suite>.csv`` / ``<suite>.json`` plus a ``<suite>.meta.json`` sidecar.

    Data files hold no timestamps; run metadata lives only in the sidecar.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = out_dir / f"{cfg.suite}.csv"
        path.write_text(result.csv())
        written.append(path)
    if fmt in ("structured", "both"):
        doc = result.document()
        doc["config"] = config_to_dict(cfg)
        path = out_dir / f"{cfg.suite}.json"
        path.write_text(dumps(doc))
        written.append(path)
    meta = {
        "package_version": __version__,
        "backend": kernels.backend_name(),
        "threads": thread_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.mc.seed,
        "samples": cfg.mc.samples,
        "config": str(config_source) if config_source else "default",
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "elapsed_seconds": elapsed,
        "checks_passed": result.ok,
    }
    path = out_dir / f"{cfg.suite}.meta.json"
    path.write_text(dumps(meta))
    written.append(path)
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(SUITES))
        return EXIT_OK
    try:
        cfgs = [c.with_overrides(args.seed, args.samples, str(args.out) if args.out else None) for c in _configs(args)]
    except (ConfigError, InvalidSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    code = EXIT_OK
    for cfg in cfgs:
        start = time.perf_counter()
        try:
            result = run_suite(cfg)
        except (InvalidSpecError, ValueError) as exc:
            print(f"error: {cfg.suite}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        elapsed = round(time.perf_counter() - start, 3)
        try:
            emit(result, cfg, cfg.output_path, args.format, elapsed, args.config)
        except OSError as exc:
            print(f"error: cannot write results: {exc}", file=sys.stderr)
            return EXIT_INPUT
        if not args.quiet:
            print(f"{cfg.suite}: {'ok' if result.ok else 'CHECK FAILED'} ({elapsed:.2f}s)")
            for c in result.checks:
                print(f"  [{'pass' if c.ok else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        if not result.ok:
            code = EXIT_CHECK
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
