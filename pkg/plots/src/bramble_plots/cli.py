"""render: turn an experiment output directory into report figures.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 schema error.
"""

import argparse
import os
import sys

from .io import FIGURES, PlotInputError, PlotSchemaError, load_manifest, load_rows


def build_parser():
    p = argparse.ArgumentParser(
        prog="render",
        description="Render report figures from an experiment output directory.")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="experiment output directory (with manifest.json)")
    p.add_argument("--figures", required=True,
                   help="comma-separated subset of: " + ",".join(FIGURES))
    p.add_argument("--format", choices=("svg", "png"), default="svg")
    p.add_argument("--out", default=None,
                   help="output directory (default: the input directory)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    names = [f.strip() for f in args.figures.split(",") if f.strip()]
    unknown = [f for f in names if f not in FIGURES]
    if not names or unknown:
        print(f"unknown figures: {unknown or 'none requested'}", file=sys.stderr)
        return 2

    # import here so a bad command line never pays the matplotlib startup cost
    from .figures import RENDERERS, save

    out_dir = args.out or args.in_dir
    try:
        manifest = load_manifest(args.in_dir)
        os.makedirs(out_dir, exist_ok=True)
        for name in names:
            rows = load_rows(args.in_dir, name)
            fig = RENDERERS[name](rows, manifest)
            path = os.path.join(out_dir, f"{name}.{args.format}")
            save(fig, path, args.format)
            print(f"wrote {path}")
    except PlotInputError as e:
        print(str(e), file=sys.stderr)
        return 3
    except PlotSchemaError as e:
        print(str(e), file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
