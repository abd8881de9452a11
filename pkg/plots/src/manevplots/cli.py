"""Command-line wrapper: `render --kind <k> --run <dir> --out <file>`.

Exit codes: 0 success; 2 schema mismatch, missing columns, or empty series;
4 failure writing the output image.
"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, SchemaMismatchError, render

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="render a standard figure from a simulation run directory",
    )
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--run", required=True, help="run directory")
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(run_dir=args.run, kind=args.kind, out_path=args.out)
    try:
        render(spec)
    except SchemaMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {args.out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
