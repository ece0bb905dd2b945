"""Command-line entry point.

    mfchaos <simulate|meanfield|oracle|hierarchy|chaos|report>
            --config <file.json> [--out <dir>] [--seed <u64>]

The config document's ``kind`` must match the subcommand; ``--seed``
overrides the configured seed and is echoed in the manifest.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cf
from . import harness
from .errors import ConfigError, MfchaosError

KINDS = ("simulate", "meanfield", "oracle", "hierarchy", "chaos", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfchaos",
        description="particle systems, mean-field solvers and dual correlation diagnostics",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--out", default=None, help="run directory (default: runs/<kind>-<hash>)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = cf.load_config(args.config)
        if doc["kind"] != args.kind:
            raise ConfigError(
                f"config kind {doc['kind']!r} does not match subcommand {args.kind!r}"
            )
        out = args.out
        if out is None:
            from . import io

            out = Path("runs") / f"{args.kind}-{io.run_hash(doc, args.seed or doc.get('seed', 0))}"
        manifest = harness.run_experiment(doc, out, seed=args.seed)
    except MfchaosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"run complete: {out} (hash {manifest['run_hash']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
