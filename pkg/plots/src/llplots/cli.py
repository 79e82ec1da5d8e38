"""Command line entry point: render every plot listed in a spec file."""

import argparse
import sys

from .figures import render
from .spec import SchemaError, load_spec_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="llplots",
        description="Render figures from lodll experiment CSV files")
    parser.add_argument("--spec", required=True,
                        help="JSON plot-list file")
    args = parser.parse_args(argv)
    try:
        specs = load_spec_file(args.spec)
    except (OSError, ValueError) as exc:
        print(f"error: spec: {exc}", file=sys.stderr)
        return 2
    try:
        for spec in specs:
            for path in render(spec):
                print(path)
    except SchemaError as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
