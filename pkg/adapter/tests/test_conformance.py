"""Conformance: the harness's own protocol suite run against this adapter.

The harness package is only a test dependency here; the adapter itself
stays stdlib-only and speaks nothing but the wire protocol.
"""
from __future__ import annotations

import sys
import threading

import pytest

drivestress = pytest.importorskip("drivestress")

from drivestress.modelio import HttpTransport, StdioTransport
from drivestress.protocol_suite import run_suite, write_replay_fixture

from drivestress_adapter import ReplayModel, StubModel, load_replay, make_http_server

FULL_SUITE = [
    "valid_request",
    "valid_request_paths",
    "stub_kinematics",
    "with_coc_false",
    "malformed_request",
    "shape_rejection",
    "coc_contract_violation",
]


def assert_all_passed(results, expected_names):
    assert [r.name for r in results] == expected_names
    failed = [str(r) for r in results if not r.passed]
    assert not failed, "\n".join(failed)


@pytest.fixture(scope="module")
def replay_file(tmp_path_factory):
    return write_replay_fixture(tmp_path_factory.mktemp("replay") / "replay.json")


class TestStdio:
    def test_stub_mode_passes_core_suite(self, tmp_path):
        cmd = (sys.executable, "-m", "drivestress_adapter", "--mode", "stub")
        with StdioTransport(cmd, timeout_s=30.0) as transport:
            results = run_suite(transport, stub=True, frames_dir=tmp_path)
        assert_all_passed(
            results,
            ["valid_request", "valid_request_paths", "stub_kinematics",
             "with_coc_false", "malformed_request"],
        )

    def test_replay_mode_passes_full_suite(self, replay_file, tmp_path):
        cmd = (
            sys.executable, "-m", "drivestress_adapter",
            "--mode", "replay", "--replay-file", str(replay_file),
        )
        with StdioTransport(cmd, timeout_s=30.0) as transport:
            results = run_suite(transport, stub=True, replay=True, frames_dir=tmp_path)
        assert_all_passed(results, FULL_SUITE)

    def test_console_script_entry_point(self, replay_file, tmp_path):
        cmd = (
            sys.executable, "-c",
            "from drivestress_adapter.cli import main; raise SystemExit(main())",
            "--mode", "replay", "--replay-file", str(replay_file),
        )
        with StdioTransport(cmd, timeout_s=30.0) as transport:
            results = run_suite(transport, stub=True, replay=True, frames_dir=tmp_path)
        assert_all_passed(results, FULL_SUITE)


class TestHttp:
    @pytest.fixture()
    def http_url(self, replay_file):
        model = ReplayModel(load_replay(replay_file), fallback=StubModel())
        server = make_http_server("127.0.0.1", 0, model)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address[:2]
        yield f"http://{host}:{port}"
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)

    def test_replay_mode_passes_full_suite(self, http_url, tmp_path):
        transport = HttpTransport(http_url, timeout_s=30.0)
        results = run_suite(transport, stub=True, replay=True, frames_dir=tmp_path)
        assert_all_passed(results, FULL_SUITE)

    def test_malformed_post_keeps_server_alive(self, http_url):
        transport = HttpTransport(http_url, timeout_s=30.0)
        frame = transport.raw_roundtrip("this is not json {")
        assert frame["error"] == "bad_json"
        frame2 = transport.raw_roundtrip("[1, 2, 3]")
        assert frame2["error"] == "bad_request"
