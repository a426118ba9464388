"""Command-line figure generation: one kind per call, or every kind that applies."""

from __future__ import annotations

import argparse
import sys

from perihom_plots.figures import FIGURE_KINDS, FigureSpec, SchemaError, plot


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="perihom-plots",
                                     description="render perihom sweep artifacts")
    parser.add_argument("kind", choices=sorted(FIGURE_KINDS))
    parser.add_argument("--input", required=True, help="sweep/shift CSV or push-forward VTK")
    parser.add_argument("--out", required=True, help="output image path (.png or .svg)")
    args = parser.parse_args(argv)
    try:
        plot(FigureSpec(input_path=args.input, kind=args.kind, output_path=args.out))
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
