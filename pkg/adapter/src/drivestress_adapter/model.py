"""Model implementations behind the wire protocol.

A model is anything with ``infer(request) -> dict`` returning a wire
response. Two are shipped:

  StubModel    constant-velocity extrapolation from the last ego state; the
               deterministic stand-in used for harness conformance runs.
  ReplayModel  canned responses keyed by clip_id, falling back to a stub for
               unknown clips. Canned entries are served verbatim, including
               deliberately malformed ones, so the harness's client-side
               rejection paths can be exercised end to end.

Integrating a real model
------------------------
Replace StubModel.infer with a call into your runtime. ``decode_frames``
yields the raw PNG bytes for each frame (inline payloads are base64-decoded,
path entries are read relative to ``frames_root``), and the request carries
the sampling parameters (temperature, top_p, seed) plus the reasoning token
budget. Respect ``with_coc``: when it is false the caller budgeted
max_new_tokens=1 and the response must not contain a ``coc`` field.
"""
from __future__ import annotations

import base64
import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .protocol import TRAJECTORY_DT, TRAJECTORY_LEN, BadRequest, Request

DEFAULT_COC = "Proceed along the lane and keep the current speed."

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def decode_frames(request: Request, frames_root: str | Path | None = None) -> list[bytes]:
    """Raw image bytes per frame, for handing to a real model runtime."""
    out = []
    for f in request.frames:
        if isinstance(f, dict):
            out.append(base64.b64decode(f["b64"]))
        else:
            path = Path(f)
            if frames_root is not None and not path.is_absolute():
                path = Path(frames_root) / path
            try:
                out.append(path.read_bytes())
            except OSError as exc:
                raise BadRequest(f"frame {f!r} is not readable: {exc}") from exc
    return out


@dataclass(frozen=True)
class StubModel:
    """Rolls the last ego state forward at constant velocity for 64 steps."""

    coc_text: str = DEFAULT_COC

    def infer(self, request: Request) -> dict:
        started = time.perf_counter()
        last = request.ego_history[-1]
        trajectory = [
            [last.x + last.vx * TRAJECTORY_DT * (i + 1),
             last.y + last.vy * TRAJECTORY_DT * (i + 1)]
            for i in range(TRAJECTORY_LEN)
        ]
        response = {
            "trajectory": trajectory,
            "latency_ms": (time.perf_counter() - started) * 1000.0,
        }
        if request.with_coc:
            response["coc"] = self.coc_text
        return response


@dataclass(frozen=True)
class ReplayModel:
    """Serves canned responses verbatim, deferring unknown clips to a fallback.

    No validation is applied to the canned entries: a replay file may contain
    contract-violating responses on purpose, and repairing them here would
    defeat the conformance checks they exist for.
    """

    replay: dict
    fallback: StubModel = field(default_factory=StubModel)

    def infer(self, request: Request) -> dict:
        canned = self.replay.get(request.clip_id)
        if canned is not None:
            return copy.deepcopy(canned)
        return self.fallback.infer(request)


def load_replay(path: str | Path) -> dict:
    """Load a replay file: a JSON object mapping clip_id to a response object."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read replay file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"replay file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, dict) for k, v in data.items()
    ):
        raise ValueError(f"replay file {path} must map clip ids to response objects")
    return data
