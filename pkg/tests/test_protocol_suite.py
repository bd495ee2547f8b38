from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from drivestress.modelio import HttpTransport, StdioTransport
from drivestress.protocol_suite import (
    REPLAY_COC_CLIP,
    REPLAY_SHAPE_CLIP,
    STUB_ENDPOINT,
    CheckResult,
    replay_fixture,
    run_suite,
    suite_ego_history,
    suite_frames_inline,
    write_replay_fixture,
)

# Stand-in backend used as a subprocess. Behavior knob via argv:
#   ok               conformant constant-velocity stub with replay support
#   coc_always       sends CoC text even when with_coc is false
#   crash_on_garbage dies instead of answering malformed input with an error frame
#   short_trajectory always returns 63 waypoints
#   sanitize_replay  "fixes" replay responses instead of serving them verbatim
SERVER = r"""
import json, sys

behavior = sys.argv[1] if len(sys.argv) > 1 else "ok"
REPLAY = {
    "replay_shape_63": {
        "trajectory": [[float(i), 0.0] for i in range(63)],
        "coc": "Keep lane.", "latency_ms": 5.0,
    },
    "replay_coc_violation": {
        "trajectory": [[float(i), 0.0] for i in range(64)],
        "coc": "Keep lane.", "latency_ms": 5.0,
    },
}


def respond(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    try:
        req = json.loads(line)
    except ValueError:
        if behavior == "crash_on_garbage":
            sys.exit(1)
        respond({"error": "bad_request", "message": "request is not valid JSON"})
        continue
    clip = req.get("clip_id", "")
    if clip in REPLAY:
        if behavior == "sanitize_replay":
            fixed = dict(REPLAY[clip])
            fixed["trajectory"] = [[float(i), 0.0] for i in range(64)]
            if not req.get("with_coc", True):
                fixed.pop("coc", None)
            respond(fixed)
        else:
            respond(REPLAY[clip])
        continue
    last = req["ego_history"][-1]
    n = 63 if behavior == "short_trajectory" else 64
    traj = [
        [last["x"] + last["vx"] * 0.1 * (i + 1), last["y"] + last["vy"] * 0.1 * (i + 1)]
        for i in range(n)
    ]
    resp = {"trajectory": traj, "latency_ms": 3.0}
    if req.get("with_coc", True) or behavior == "coc_always":
        resp["coc"] = "Proceed along the lane."
    respond(resp)
"""


@pytest.fixture
def stdio(request):
    transports = []

    def start(behavior: str = "ok") -> StdioTransport:
        t = StdioTransport((sys.executable, "-c", SERVER, behavior), timeout_s=10.0)
        transports.append(t)
        return t

    yield start
    for t in transports:
        t.close()


def by_name(results: list[CheckResult]) -> dict[str, CheckResult]:
    assert len({r.name for r in results}) == len(results)
    return {r.name: r for r in results}


class TestFixturePieces:
    def test_stub_endpoint_kinematics(self):
        # 10 m/s for 64 steps of 0.1 s
        assert STUB_ENDPOINT == (64.0, 0.0)

    def test_ego_history_ends_at_origin(self):
        hist = suite_ego_history()
        assert hist[-1].x == 0.0 and hist[-1].y == 0.0
        assert all(s.vx == 10.0 and s.vy == 0.0 for s in hist)
        assert [s.t for s in hist] == [-0.4, -0.3, -0.2, -0.1, 0.0]

    def test_replay_fixture_shapes(self):
        fixture = replay_fixture()
        assert len(fixture[REPLAY_SHAPE_CLIP]["trajectory"]) == 63
        assert len(fixture[REPLAY_COC_CLIP]["trajectory"]) == 64
        assert fixture[REPLAY_COC_CLIP]["coc"]

    def test_write_replay_fixture_roundtrip(self, tmp_path):
        path = write_replay_fixture(tmp_path / "replay.json")
        assert json.loads(path.read_text()) == replay_fixture()

    def test_check_result_str(self):
        assert str(CheckResult("x", True, "fine")) == "[PASS] x: fine"
        assert str(CheckResult("x", False, "broke")) == "[FAIL] x: broke"

    def test_inline_frames_are_b64_payloads(self):
        frames = suite_frames_inline(3)
        assert len(frames) == 3
        assert all(set(f) == {"b64"} for f in frames)


class TestConformantServer:
    def test_full_suite_passes(self, stdio, tmp_path):
        results = run_suite(stdio("ok"), stub=True, replay=True, frames_dir=tmp_path)
        assert [r.name for r in results] == [
            "valid_request", "valid_request_paths", "stub_kinematics",
            "with_coc_false", "malformed_request", "shape_rejection",
            "coc_contract_violation",
        ]
        failed = [str(r) for r in results if not r.passed]
        assert not failed, "\n".join(failed)

    def test_minimal_suite_skips_optional_checks(self, stdio):
        results = run_suite(stdio("ok"))
        assert [r.name for r in results] == [
            "valid_request", "with_coc_false", "malformed_request",
        ]
        assert all(r.passed for r in results)


class TestBrokenServers:
    def test_coc_despite_ablation_detected(self, stdio):
        results = by_name(run_suite(stdio("coc_always")))
        assert results["valid_request"].passed
        assert not results["with_coc_false"].passed

    def test_crash_on_garbage_detected(self, stdio):
        results = by_name(run_suite(stdio("crash_on_garbage")))
        assert results["valid_request"].passed
        assert results["with_coc_false"].passed
        assert not results["malformed_request"].passed

    def test_wrong_waypoint_count_detected(self, stdio):
        results = by_name(run_suite(stdio("short_trajectory")))
        assert not results["valid_request"].passed
        assert "expected 64 waypoints, got 63" in results["valid_request"].detail

    def test_sanitized_replays_detected(self, stdio):
        # a backend that quietly repairs the canned bad responses defeats the
        # client-rejection checks, and the suite must say so
        results = by_name(run_suite(stdio("sanitize_replay"), replay=True))
        assert not results["shape_rejection"].passed
        assert "accepted" in results["shape_rejection"].detail
        assert not results["coc_contract_violation"].passed


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        try:
            req = json.loads(raw.decode("utf-8"))
        except ValueError:
            self._reply({"error": "bad_request", "message": "request is not valid JSON"})
            return
        if req.get("clip_id") in (REPLAY_SHAPE_CLIP, REPLAY_COC_CLIP):
            self._reply(replay_fixture()[req["clip_id"]])
            return
        last = req["ego_history"][-1]
        traj = [
            [last["x"] + last["vx"] * 0.1 * (i + 1), last["y"] + last["vy"] * 0.1 * (i + 1)]
            for i in range(64)
        ]
        resp = {"trajectory": traj, "latency_ms": 3.0}
        if req.get("with_coc", True):
            resp["coc"] = "Proceed along the lane."
        self._reply(resp)

    def _reply(self, obj):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class TestHttpTransportSuite:
    def test_full_suite_over_http(self):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/infer"
            transport = HttpTransport(url, timeout_s=10.0)
            results = run_suite(transport, stub=True, replay=True)
            failed = [str(r) for r in results if not r.passed]
            assert not failed, "\n".join(failed)
        finally:
            server.shutdown()
            server.server_close()
