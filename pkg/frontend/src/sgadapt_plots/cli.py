"""Command line figure renderer for sgadapt run directories."""

import argparse
import sys

from .render import KINDS, PlotRequest, SchemaError, render


def parse_slopes(text):
    if not text:
        return ()
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise SchemaError(f"malformed slope list {text!r}") from exc


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sgadapt-plot",
        description="Render figures from sgadapt run artifacts")
    parser.add_argument("run_dir", help="run directory with convergence.csv")
    parser.add_argument("--kind", choices=KINDS, default="convergence")
    parser.add_argument("--slopes", default="",
                        help="comma-separated guide slopes, e.g. -0.55,-0.6667")
    parser.add_argument("-o", "--output", default=None,
                        help="output image path (default <run>/<kind>.png)")
    argv = list(sys.argv[1:] if argv is None else argv)
    for i, tok in enumerate(argv):
        # keep "--slopes -0.55,..." working: argparse would read the value
        # as an option because of the leading dash
        if tok == "--slopes" and i + 1 < len(argv):
            argv[i:i + 2] = [f"--slopes={argv[i + 1]}"]
            break
    args = parser.parse_args(argv)

    try:
        request = PlotRequest(run_dir=args.run_dir, kind=args.kind,
                              slopes=parse_slopes(args.slopes),
                              output=args.output)
        out = render(request)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
