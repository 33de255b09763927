"""Command-line entry point: ``biloop run | sweep | verify``.

Exit codes: 0 success, 1 failed verification criteria or sweep rows with
errors, 2 configuration or validation error, 3 divergence.
"""

import argparse
import sys
from dataclasses import replace

from .config import load_config
from .exceptions import BiloopError, DivergenceError
from .runner import format_table, run_experiment, sweep

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parser():
    p = argparse.ArgumentParser(prog="biloop", description="Bilevel optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True, help="path to a key = value config file")
    run.add_argument("--output", help="trace CSV path (overrides the config's output key)")

    sw = sub.add_parser("sweep", help="run a config once per value of one axis")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, choices=("N", "Q", "scheme"))
    sw.add_argument("--values", required=True, help="comma-separated axis values (may be empty)")
    sw.add_argument("--workers", type=int, help="parallel runs (default: cores, capped by BILOOP_THREADS)")

    ver = sub.add_parser("verify", help="run the built-in acceptance suite")
    ver.add_argument("--filter", help="only criteria whose name contains this text (or a criterion number)")
    return p


def _load(path, output=None):
    cfg = load_config(path)
    return replace(cfg, output=output) if output else cfg


def cmd_run(args, out):
    cfg = _load(args.config, args.output)
    _, row = run_experiment(cfg)
    out.write(format_table([row]))
    return EXIT_OK


def cmd_sweep(args, out):
    cfg = load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.axis, values, workers=args.workers)
    out.write(format_table(rows, title=f"sweep over {args.axis}"))
    return EXIT_FAILED if any(r.error for r in rows) else EXIT_OK


def cmd_verify(args, out):
    from .verify import report, select

    chosen = select(args.filter)
    if not chosen:
        out.write(f"no criterion matches {args.filter!r}\n")
        return EXIT_CONFIG
    results = []
    for c in chosen:
        r = c()
        results.append(r)
        out.write(r.line() + "\n")
        out.flush()
    out.write(report(results).splitlines()[-1] + "\n")
    n_pass = sum(r.passed for r in results)
    return EXIT_OK if n_pass == len(results) else EXIT_FAILED


def main(argv=None, out=None):
    out = out or sys.stdout
    args = _parser().parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}[args.command]
    try:
        return handler(args, out)
    except DivergenceError as exc:
        print(f"biloop: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BiloopError, ValueError, OSError) as exc:
        print(f"biloop: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
