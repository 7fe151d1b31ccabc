"""Command line driver: ``fracsem <study> --config cfg.toml --out DIR``.

Each run writes ``<study>_<timestamp>.csv`` and a manifest
``<study>_<timestamp>.manifest.toml`` holding the resolved config. The last
line on stdout is a JSON status record; failures print a JSON error record
on stderr and exit with a nonzero code (2 for invalid input).
"""

import argparse
import csv
import datetime as dt
import json
import math
import os
import platform
import re
import sys

COMMANDS = {
    "matrix-error": "matrix_error",
    "refine-h": "refine_h",
    "refine-p": "refine_p",
    "fastmv-timing": "fastmv_timing",
    "solve": "solve",
}

_CODE = re.compile(r"^([a-z]+(?:-[a-z]+)+):")
_INPUT_CODES = {"usage-error", "config-invalid", "invalid-domain", "invalid-size", "invalid-ratio", "invalid-grading",
                "unsupported-mesh", "degree-too-low", "dimension-mismatch"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValueError(f"usage-error: {message}")


def build_parser():
    parser = _Parser(prog="fracsem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML config file (defaults when omitted)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread limit")
    return parser


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _clean(row.get(k, "")) for k in columns})


def _error_code(exc):
    m = _CODE.match(str(exc))
    if m:
        return m.group(1)
    if isinstance(exc, FileNotFoundError):
        return "config-invalid"
    return "internal-error"


def run(argv=None):
    args = build_parser().parse_args(argv)
    from threadpoolctl import threadpool_limits

    from . import __version__
    from .experiments import SCHEMA_VERSION, SCHEMAS, dump_config, load_config, run_study

    cfg = load_config(args.config)
    cfg.study = args.command  # the subcommand decides the study
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.validate()
    os.makedirs(args.out, exist_ok=True)
    stamp = dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")
    stem = os.path.join(args.out, f"{COMMANDS[args.command]}_{stamp}")
    with threadpool_limits(limits=cfg.threads):
        t0 = dt.datetime.now()
        rows = run_study(cfg)
        seconds = (dt.datetime.now() - t0).total_seconds()
    csv_path = stem + ".csv"
    write_csv(csv_path, rows, SCHEMAS[args.command])
    import numpy
    import scipy

    extra = {
        "study": args.command, "timestamp": stamp, "csv": os.path.basename(csv_path),
        "csv_schema": f"{args.command}/v{SCHEMA_VERSION}", "columns": SCHEMAS[args.command],
        "rows": len(rows), "seconds": seconds, "package_version": __version__,
        "python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
    }
    manifest_path = stem + ".manifest.toml"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg, extra))
    return {"status": "ok", "study": args.command, "csv": csv_path, "manifest": manifest_path, "rows": len(rows)}


def main(argv=None):
    try:
        result = run(argv)
    except SystemExit:
        raise
    except Exception as exc:  # reported as one machine-readable line
        code = _error_code(exc)
        print(json.dumps({"status": "error", "code": code, "message": str(exc),
                          "type": type(exc).__name__}), file=sys.stderr)
        return 2 if code in _INPUT_CODES else 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
