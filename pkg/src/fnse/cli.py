"""Command-line entry point.

Exit status is 0 when every check passes, 1 when any check fails and 2 on
configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod
from . import suites

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

ACTIONS = {
    "verify-levy": suites.verify_levy,
    "verify-fields": suites.verify_fields,
    "verify-feynman-kac": suites.verify_feynman_kac,
    "verify-estimates": suites.verify_estimates,
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="fnse",
        description="Stochastic Lagrangian solver and verification suites for fractal "
                    "Navier-Stokes equations on the torus.",
        epilog="Config keys (key = value, one per line, '#' comments):\n" + cfgmod.help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", nargs="?", choices=cfgmod.COMMANDS,
                   help="command to run; overrides the 'command' key of the config")
    p.add_argument("--config", type=Path, help="run configuration file")
    p.add_argument("--seed", type=str, help="64-bit master seed (overrides master_seed)")
    p.add_argument("--workers", type=int, help="cap on worker threads")
    p.add_argument("--output", type=Path,
                   help="artifact directory (default: output_dir key, then $FNSE_OUTPUT)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; may be repeated")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def load(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.command:
        overrides["command"] = args.command
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    return cfgmod.parse_config(text, overrides)


def output_dir(args, cfg):
    if args.output is not None:
        return args.output
    if cfg.output_dir:
        return Path(cfg.output_dir)
    env = os.environ.get("FNSE_OUTPUT")
    return Path(env) if env else None


def run(cfg, out=None, stream=None):
    """Execute ``cfg.command``; prints one line per check and returns the exit status."""
    stream = stream or sys.stdout
    cmd = cfg.command
    t0 = time.perf_counter()
    if cmd in ACTIONS:
        checks = ACTIONS[cmd](cfg)
    elif cmd == "solve":
        checks, _ = suites.solve(cfg, out)
    elif cmd == "continue":
        checks, _ = suites.continue_solution(cfg, out)
    else:
        checks = suites.compare(cfg)
    if out is not None:
        suites.write_checks(Path(out), checks)
    for c in checks:
        print(c.line(), file=stream)
    n_fail = sum(not c.passed for c in checks)
    print(f"{cmd}: {len(checks) - n_fail}/{len(checks)} checks passed "
          f"in {time.perf_counter() - t0:.1f} s", file=stream)
    return EXIT_FAIL if n_fail else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return run(cfg, output_dir(args, cfg))
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logging.getLogger("fnse").debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
