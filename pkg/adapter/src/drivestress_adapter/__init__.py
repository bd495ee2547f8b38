"""Backend adapter speaking the drivestress wire protocol.

The harness talks to inference backends through line-delimited JSON over a
subprocess's standard streams or through single-POST HTTP. This package is
the reference server side of that contract: it validates requests, answers
with either a deterministic constant-velocity stub or canned replay
responses, and never dies on malformed input. The package is intentionally
stdlib-only so it can be vendored next to a real model runtime without
dependency conflicts.
"""
from .model import ReplayModel, StubModel, decode_frames, load_replay
from .protocol import (
    BadRequest,
    EgoSample,
    Request,
    error_frame,
    parse_request,
)
from .server import handle_line, make_http_server, serve_stdio

__version__ = "0.1.0"

__all__ = [
    "BadRequest",
    "EgoSample",
    "ReplayModel",
    "Request",
    "StubModel",
    "decode_frames",
    "error_frame",
    "handle_line",
    "load_replay",
    "make_http_server",
    "parse_request",
    "serve_stdio",
    "__version__",
]
