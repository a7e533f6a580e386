"""Command-line front end.

    databrowse plot <uri> [-o out] [--format png|svg] [--timerange T] [--size WxH]
    databrowse data <uri> --format csv|qds [-o out]
    databrowse complete <partial>
    databrowse vap <file.vap> -o out.png
    databrowse serve [--port N] [--cache DIR]
    databrowse pngwalk --uri <templated uri> --timerange T --cadence day|month|hour -o DIR

`plot` and the service's /plot endpoint share one pipeline, so both
produce byte-identical output for identical inputs.  `pngwalk` writes
one image per calendar interval plus an index file (one line per image:
ISO start, a tab, the file name) and is idempotent: a rerun rewrites the
same bytes.
"""

from __future__ import annotations

import argparse
import sys
from datetime import timezone
from pathlib import Path

from .chrono import enumerate_intervals, format_template, parse_timerange
from .datasource import default_registry
from .dom import DOM
from .render import render_canvas
from .service import (ServiceError, export_bytes, make_resolver, plot_bytes,
                      run_server)
from .uri import complete as complete_uri
from .vfs import Vfs

WALK_TEMPLATES = {
    "hour": "product_$Y$m$d_$H.png",
    "day": "product_$Y$m$d.png",
    "month": "product_$Y$m.png",
}


def _parse_size(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise SystemExit(f"--size must look like 800x600, got {text!r}")


def _write_out(data: bytes, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
    else:
        Path(out).write_bytes(data)


def _cmd_plot(args) -> int:
    width, height = _parse_size(args.size)
    data = plot_bytes(args.uri, args.format, args.timerange, width, height,
                      Vfs(args.cache), default_registry())
    _write_out(data, args.output)
    return 0


def _cmd_data(args) -> int:
    data, _ctype = export_bytes(args.uri, args.format, Vfs(args.cache),
                                default_registry(), args.timerange)
    _write_out(data, args.output)
    return 0


def _cmd_complete(args) -> int:
    suggestions = complete_uri(args.partial, default_registry(), Vfs(args.cache))
    for s in suggestions:
        print(s.text)
    return 0


def _cmd_vap(args) -> int:
    vfs = Vfs(args.cache)
    registry = default_registry()
    blob = Path(args.file).read_bytes()
    dom = DOM.load_vap(blob, resolver=make_resolver(vfs, registry))
    fmt = "svg" if args.output and args.output.endswith(".svg") else "png"
    _write_out(render_canvas(dom, fmt), args.output)
    return 0


def _cmd_serve(args) -> int:
    run_server(port=args.port, cache_dir=args.cache)
    return 0


def _cmd_pngwalk(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = parse_timerange(args.timerange)
    intervals = enumerate_intervals(rng, args.cadence)
    template = WALK_TEMPLATES[args.cadence]
    vfs = Vfs(args.cache)
    registry = default_registry()
    entries = []
    failures = 0
    for interval in intervals:
        name = format_template(template, interval.start)
        try:
            data = plot_bytes(args.uri, "png", interval.iso(), args.width,
                              args.height, vfs, registry)
        except Exception as e:
            failures += 1
            print(f"{name}: {e}", file=sys.stderr)
            continue
        (out_dir / name).write_bytes(data)
        entries.append((interval.start, name))
    index_lines = [
        f"{start.strftime('%Y-%m-%dT%H:%M')}Z\t{name}" for start, name in entries
    ]
    (out_dir / "index.txt").write_text("\n".join(index_lines) + "\n")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="databrowse",
        description="Browse, aggregate, render, and export URI-addressed datasets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_cache(sp):
        sp.add_argument("--cache", default=None, metavar="DIR",
                        help="download cache directory (default: ~/autoplot_data)")

    p = sub.add_parser("plot", help="render a URI to PNG or SVG")
    p.add_argument("uri")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--format", choices=("png", "svg"), default="png")
    p.add_argument("--timerange", default=None)
    p.add_argument("--size", default="800x600")
    add_cache(p)
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("data", help="export a dataset as CSV or interchange")
    p.add_argument("uri")
    p.add_argument("--format", choices=("csv", "qds"), required=True)
    p.add_argument("--timerange", default=None)
    p.add_argument("-o", "--output", default=None)
    add_cache(p)
    p.set_defaults(fn=_cmd_data)

    p = sub.add_parser("complete", help="suggest completions for a partial URI")
    p.add_argument("partial")
    add_cache(p)
    p.set_defaults(fn=_cmd_complete)

    p = sub.add_parser("vap", help="render a saved .vap state to an image")
    p.add_argument("file")
    p.add_argument("-o", "--output", required=True)
    add_cache(p)
    p.set_defaults(fn=_cmd_vap)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8080)
    add_cache(p)
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("pngwalk", help="render one image per calendar interval")
    p.add_argument("--uri", required=True)
    p.add_argument("--timerange", required=True)
    p.add_argument("--cadence", choices=("hour", "day", "month"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--height", type=int, default=600)
    add_cache(p)
    p.set_defaults(fn=_cmd_pngwalk)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ServiceError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        for d in e.diagnostics:
            print(f"  - {d}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
