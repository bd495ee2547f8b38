"""Command line entry point.

    drivestress-adapter                              stub model on stdio
    drivestress-adapter --mode replay --replay-file canned.json
    drivestress-adapter --transport http --port 8731

The stdio transport keeps stdout reserved for protocol frames, so all
diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import sys

from .model import ReplayModel, StubModel, load_replay
from .server import make_http_server, serve_stdio


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivestress-adapter",
        description="Serve a trajectory model over the drivestress wire protocol.",
    )
    parser.add_argument("--mode", choices=("stub", "replay"), default="stub",
                        help="stub: constant-velocity model; replay: canned responses")
    parser.add_argument("--replay-file", metavar="PATH",
                        help="JSON object of canned responses keyed by clip_id (replay mode)")
    parser.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    parser.add_argument("--host", default="127.0.0.1", help="HTTP bind address")
    parser.add_argument("--port", type=int, default=8000,
                        help="HTTP port; 0 picks a free one")
    parser.add_argument("--coc-text", default=None,
                        help="override the stub's chain-of-causation sentence")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    stub = StubModel() if args.coc_text is None else StubModel(coc_text=args.coc_text)
    if args.mode == "replay":
        if not args.replay_file:
            parser.error("--mode replay requires --replay-file")
        try:
            model = ReplayModel(load_replay(args.replay_file), fallback=stub)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    else:
        if args.replay_file:
            parser.error("--replay-file only applies to --mode replay")
        model = stub

    if args.transport == "http":
        server = make_http_server(args.host, args.port, model)
        host, port = server.server_address[:2]
        print(f"serving on http://{host}:{port}", file=sys.stderr, flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return 0

    serve_stdio(model)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
