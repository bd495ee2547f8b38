"""Wire protocol schema: request parsing and error frames.

One request or response per JSON object. Requests carry:

    clip_id         str
    frames          list of file paths or {"b64": <base64 PNG>} objects
    ego_history     list of {t, x, y, vx, vy}, timestamps in seconds (<= 0)
    with_coc        bool; false means the caller budgeted no reasoning tokens
    max_new_tokens  int; 1 under ablation
    temperature     float, optional (default 0.6)
    top_p           float, optional (default 0.98)
    seed            int, optional (default 42)

Successful responses carry ``trajectory`` (64 [x, y] pairs), ``latency_ms``,
and ``coc`` only when the request set with_coc=true. Failures are error
frames: {"error": <code>, "message": <detail>}.
"""
from __future__ import annotations

import base64
import binascii
import math
from dataclasses import dataclass

TRAJECTORY_LEN = 64
TRAJECTORY_DT = 0.1
DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_P = 0.98
DEFAULT_SEED = 42

EGO_FIELDS = ("t", "x", "y", "vx", "vy")


class BadRequest(ValueError):
    """The request violates the wire contract; answer with an error frame."""


@dataclass(frozen=True)
class EgoSample:
    t: float
    x: float
    y: float
    vx: float
    vy: float


@dataclass(frozen=True)
class Request:
    clip_id: str
    frames: tuple
    ego_history: tuple[EgoSample, ...]
    with_coc: bool
    max_new_tokens: int
    temperature: float
    top_p: float
    seed: int


def error_frame(code: str, message: str) -> dict:
    return {"error": code, "message": message}


def _parse_frame(f) -> str | dict:
    if isinstance(f, str):
        if not f:
            raise BadRequest("frame path must be non-empty")
        return f
    if isinstance(f, dict) and isinstance(f.get("b64"), str):
        try:
            base64.b64decode(f["b64"], validate=True)
        except (binascii.Error, ValueError) as exc:
            raise BadRequest(f"frame b64 payload does not decode: {exc}") from exc
        return {"b64": f["b64"]}
    raise BadRequest(f"frame must be a path or {{'b64': ...}}, got {f!r:.80}")


def _parse_ego(s) -> EgoSample:
    if not isinstance(s, dict):
        raise BadRequest(f"ego sample must be an object, got {type(s).__name__}")
    values = {}
    for name in EGO_FIELDS:
        if name not in s:
            raise BadRequest(f"ego sample missing field {name!r}")
        try:
            v = float(s[name])
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"ego sample field {name!r} is not a number: {s[name]!r}") from exc
        if not math.isfinite(v):
            raise BadRequest(f"ego sample field {name!r} must be finite, got {v!r}")
        values[name] = v
    return EgoSample(**values)


def parse_request(d) -> Request:
    """Validate one decoded wire object; raises BadRequest with a readable reason."""
    if not isinstance(d, dict):
        raise BadRequest(f"request must be an object, got {type(d).__name__}")
    try:
        frames_raw = d["frames"]
        if not isinstance(frames_raw, list):
            raise BadRequest("frames must be a list")
        frames = tuple(_parse_frame(f) for f in frames_raw)
        ego_raw = d["ego_history"]
        if not isinstance(ego_raw, list) or not ego_raw:
            raise BadRequest("ego_history must be a non-empty list")
        ego = tuple(_parse_ego(s) for s in ego_raw)
        clip_id = d["clip_id"]
        if not isinstance(clip_id, str) or not clip_id:
            raise BadRequest(f"clip_id must be a non-empty string, got {clip_id!r}")
        max_new_tokens = int(d["max_new_tokens"])
        if max_new_tokens < 1:
            raise BadRequest(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        return Request(
            clip_id=clip_id,
            frames=frames,
            ego_history=ego,
            with_coc=bool(d["with_coc"]),
            max_new_tokens=max_new_tokens,
            temperature=float(d.get("temperature", DEFAULT_TEMPERATURE)),
            top_p=float(d.get("top_p", DEFAULT_TOP_P)),
            seed=int(d.get("seed", DEFAULT_SEED)),
        )
    except KeyError as exc:
        raise BadRequest(f"request missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, BadRequest):
            raise
        raise BadRequest(f"request invalid: {exc}") from exc
