"""Wire-protocol conformance checks for inference backends.

The suite drives any transport (stdio subprocess or HTTP endpoint) through
the request/response contract: well-formed inference, the ablation token
budget, error frames for malformed input, liveness after an error, and the
client-side rejections (wrong waypoint count, CoC despite with_coc=false)
exercised through canned replay responses the backend serves verbatim.

Backends under test implement the adapter side; the mock backend and any
real adapter must pass the same checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import save_image
from .modelio import (
    BackendError,
    InferenceRequest,
    ProtocolViolationError,
    Transport,
    TrajectoryShapeError,
    encode_frame_inline,
)
from .types import TRAJECTORY_DT, TRAJECTORY_LEN, EgoState

REPLAY_SHAPE_CLIP = "replay_shape_63"
REPLAY_COC_CLIP = "replay_coc_violation"

STUB_SPEED_MPS = 10.0
STUB_ENDPOINT = (STUB_SPEED_MPS * TRAJECTORY_LEN * TRAJECTORY_DT, 0.0)
STUB_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail}"


def replay_fixture() -> dict[str, dict]:
    """Canned responses a replay-mode backend serves keyed by clip_id.

    The 63-waypoint entry and the coc-despite-ablation entry exist to prove
    the client rejects them; the shapes here are intentionally wrong.
    """
    short = [[float(i), 0.0] for i in range(TRAJECTORY_LEN - 1)]
    full = [[float(i), 0.0] for i in range(TRAJECTORY_LEN)]
    return {
        REPLAY_SHAPE_CLIP: {"trajectory": short, "coc": "Keep lane.", "latency_ms": 5.0},
        REPLAY_COC_CLIP: {"trajectory": full, "coc": "Keep lane.", "latency_ms": 5.0},
    }


def write_replay_fixture(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(replay_fixture(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def suite_ego_history(speed_mps: float = STUB_SPEED_MPS) -> tuple[EgoState, ...]:
    """Five states ending at the origin moving +x at the given speed."""
    return tuple(
        EgoState(
            t=round(-0.4 + 0.1 * i, 1),
            x=speed_mps * (-0.4 + 0.1 * i),
            y=0.0,
            vx=speed_mps,
            vy=0.0,
        )
        for i in range(5)
    )


def _suite_frame(tag: int) -> np.ndarray:
    img = np.zeros((16, 24, 3), dtype=np.uint8)
    img[:, :, tag % 3] = 40 + 10 * tag
    return img


def suite_frames_inline(n: int = 2) -> tuple[dict, ...]:
    return tuple(encode_frame_inline(_suite_frame(i)) for i in range(n))


def suite_frames_paths(directory: str | Path, n: int = 2) -> tuple[str, ...]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        p = directory / f"suite_frame_{i}.png"
        if not p.exists():
            save_image(_suite_frame(i), p)
        paths.append(str(p))
    return tuple(paths)


def _request(clip_id: str, frames, with_coc: bool) -> InferenceRequest:
    return InferenceRequest.build(
        clip_id=clip_id, frames=frames, ego_history=suite_ego_history(), with_coc=with_coc
    )


def check_valid_request(transport: Transport, frames) -> CheckResult:
    name = "valid_request"
    try:
        response = transport.infer(_request("suite_valid", frames, with_coc=True))
    except BackendError as exc:
        return CheckResult(name, False, f"inference failed: {exc}")
    issues = []
    if response.trajectory.waypoints.shape != (TRAJECTORY_LEN, 2):
        issues.append(f"trajectory shape {response.trajectory.waypoints.shape}")
    if not response.coc or not isinstance(response.coc, str):
        issues.append("missing CoC text despite with_coc=true")
    if not (response.latency_ms >= 0.0):
        issues.append(f"latency_ms {response.latency_ms!r}")
    if issues:
        return CheckResult(name, False, "; ".join(issues))
    return CheckResult(name, True, f"{TRAJECTORY_LEN} waypoints with CoC")


def check_stub_kinematics(transport: Transport, frames) -> CheckResult:
    name = "stub_kinematics"
    try:
        response = transport.infer(_request("suite_kinematics", frames, with_coc=True))
    except BackendError as exc:
        return CheckResult(name, False, f"inference failed: {exc}")
    end = response.trajectory.waypoints[-1]
    dx = abs(float(end[0]) - STUB_ENDPOINT[0])
    dy = abs(float(end[1]) - STUB_ENDPOINT[1])
    if dx > STUB_TOL or dy > STUB_TOL:
        return CheckResult(
            name, False,
            f"endpoint ({end[0]!r}, {end[1]!r}) != {STUB_ENDPOINT} within {STUB_TOL}",
        )
    return CheckResult(name, True, f"endpoint matches {STUB_ENDPOINT} within {STUB_TOL}")


def check_with_coc_false(transport: Transport, frames) -> CheckResult:
    name = "with_coc_false"
    request = _request("suite_no_coc", frames, with_coc=False)
    if request.to_wire()["max_new_tokens"] != 1:
        return CheckResult(name, False, "ablation request must carry max_new_tokens=1")
    try:
        response = transport.infer(request)
    except ProtocolViolationError as exc:
        return CheckResult(name, False, f"backend sent CoC despite with_coc=false: {exc}")
    except BackendError as exc:
        return CheckResult(name, False, f"inference failed: {exc}")
    if response.coc is not None:
        return CheckResult(name, False, "response carries a coc field")
    return CheckResult(name, True, "no CoC text and max_new_tokens=1")


def check_malformed_request(transport: Transport, frames) -> CheckResult:
    name = "malformed_request"
    try:
        reply = transport.raw_roundtrip("this is not json {")
    except BackendError as exc:
        return CheckResult(name, False, f"no error frame for malformed input: {exc}")
    if not isinstance(reply, dict) or "error" not in reply or "message" not in reply:
        return CheckResult(name, False, f"expected an error frame, got {reply!r}")
    try:
        transport.infer(_request("suite_after_error", frames, with_coc=True))
    except BackendError as exc:
        return CheckResult(name, False, f"backend did not survive malformed input: {exc}")
    return CheckResult(name, True, f"error frame {reply['error']!r}, next request served")


def check_shape_rejection(transport: Transport, frames) -> CheckResult:
    name = "shape_rejection"
    try:
        transport.infer(_request(REPLAY_SHAPE_CLIP, frames, with_coc=True))
    except TrajectoryShapeError as exc:
        return CheckResult(name, True, f"63-waypoint reply rejected: {exc}")
    except BackendError as exc:
        return CheckResult(name, False, f"wrong rejection type: {type(exc).__name__}: {exc}")
    return CheckResult(name, False, "63-waypoint reply was accepted")


def check_coc_contract_violation(transport: Transport, frames) -> CheckResult:
    name = "coc_contract_violation"
    try:
        transport.infer(_request(REPLAY_COC_CLIP, frames, with_coc=False))
    except ProtocolViolationError as exc:
        return CheckResult(name, True, f"CoC under ablation rejected: {exc}")
    except BackendError as exc:
        return CheckResult(name, False, f"wrong rejection type: {type(exc).__name__}: {exc}")
    return CheckResult(name, False, "CoC under ablation was accepted")


def run_suite(
    transport: Transport,
    frames=None,
    *,
    stub: bool = False,
    replay: bool = False,
    frames_dir: str | Path | None = None,
) -> list[CheckResult]:
    """Run the conformance checks against a live transport.

    stub=True adds the kinematic endpoint check (constant-velocity stub
    backends only); replay=True adds the rejection checks, which require the
    backend to serve ``replay_fixture()`` responses for the replay clip ids.
    When frames_dir is given the valid-request check also runs with
    path-typed frames from that directory.
    """
    if frames is None:
        frames = suite_frames_inline()
    results = [check_valid_request(transport, frames)]
    if frames_dir is not None:
        paths = suite_frames_paths(frames_dir)
        path_check = check_valid_request(transport, paths)
        results.append(
            CheckResult("valid_request_paths", path_check.passed, path_check.detail)
        )
    if stub:
        results.append(check_stub_kinematics(transport, frames))
    results.append(check_with_coc_false(transport, frames))
    results.append(check_malformed_request(transport, frames))
    if replay:
        results.append(check_shape_rejection(transport, frames))
        results.append(check_coc_contract_violation(transport, frames))
    return results
