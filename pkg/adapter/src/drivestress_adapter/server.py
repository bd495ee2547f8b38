"""Transport loops: line-delimited stdio and single-POST HTTP.

Both transports answer every input with exactly one JSON object. Malformed
or invalid input produces an error frame instead of killing the server; the
harness probes this deliberately.
"""
from __future__ import annotations

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .protocol import BadRequest, error_frame, parse_request


def handle_line(text: str, model) -> dict:
    """One request in, one wire object out; never raises."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        return error_frame("bad_json", f"request is not valid JSON: {exc}")
    try:
        request = parse_request(raw)
    except BadRequest as exc:
        return error_frame("bad_request", str(exc))
    try:
        return model.infer(request)
    except BadRequest as exc:
        return error_frame("bad_request", str(exc))
    except Exception as exc:  # noqa: BLE001 - the loop must survive model faults
        return error_frame("internal_error", f"{type(exc).__name__}: {exc}")


def serve_stdio(model, stdin=None, stdout=None) -> None:
    """Answer one JSON line per input line until stdin closes."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        reply = handle_line(line, model)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def make_http_server(host: str, port: int, model) -> ThreadingHTTPServer:
    """An HTTP server answering POSTed requests on any path.

    Error frames are sent with status 200 like every other reply; the frame
    body, not the status code, is the protocol's failure signal.
    """

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8", errors="replace")
            reply = json.dumps(handle_line(body, model)).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(reply)))
            self.end_headers()
            self.wfile.write(reply)

        def log_message(self, *args) -> None:
            pass

    return ThreadingHTTPServer((host, port), Handler)
