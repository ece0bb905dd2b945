"""mfchaos-report <run-dir> [--format html|md] [--out dir]"""

from __future__ import annotations

import argparse
import sys

from .loading import ReportError
from .report import make_report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfchaos-report",
        description="render figures and a summary from mfchaos run directories",
    )
    parser.add_argument("run_dir", help="a run directory, or a directory of runs")
    parser.add_argument("--format", choices=("html", "md"), default="md")
    parser.add_argument("--out", default=None, help="output directory (default: <run-dir>/report)")
    args = parser.parse_args(argv)
    try:
        out = make_report(args.run_dir, out_dir=args.out, fmt=args.format)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"report written: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
