"""Model-under-test abstraction: wire protocol, transports, mock model, baseline.

Wire protocol (one JSON message per line over stdio, or one per HTTP POST):

    request   {"clip_id", "frames", "ego_history", "with_coc",
               "max_new_tokens", "temperature", "top_p", "seed"}
    response  {"trajectory": [[x, y] * 64], "coc", "latency_ms"}
    error     {"error": code, "message": text}

Frames are file paths by default; an inline frame is {"b64": <base64 PNG>}.
The stdio transport answers requests strictly in order (the protocol carries
no correlation id); the HTTP transport allows a bounded number of in-flight
requests, one per connection.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import math
import queue
import socket
import subprocess
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
from PIL import Image

from .perturb import perturbation_energy
from .types import (
    TRAJECTORY_DT,
    TRAJECTORY_LEN,
    Clip,
    EgoState,
    Trajectory,
    ValidationError,
)

DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_P = 0.98
DEFAULT_SEED = 42
COC_MAX_NEW_TOKENS = 512
NO_COC_MAX_NEW_TOKENS = 1
DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_IN_FLIGHT = 4


class BackendError(Exception):
    """Base for everything that can go wrong talking to a model backend."""


class BackendConnectionError(BackendError):
    pass


class BackendTimeoutError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class TrajectoryShapeError(BackendError):
    pass


class ProtocolViolationError(BackendError):
    pass


class RemoteBackendError(BackendError):
    """The backend answered with an error frame."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class InferenceRequest:
    clip_id: str
    frames: tuple
    ego_history: tuple[EgoState, ...]
    with_coc: bool
    max_new_tokens: int
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValidationError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not self.with_coc and self.max_new_tokens != NO_COC_MAX_NEW_TOKENS:
            raise ValidationError(
                f"with_coc=false requires max_new_tokens={NO_COC_MAX_NEW_TOKENS}, "
                f"got {self.max_new_tokens}"
            )
        if not self.ego_history:
            raise ValidationError("ego_history must be non-empty")

    @classmethod
    def build(
        cls,
        clip_id: str,
        frames: Sequence,
        ego_history: Sequence[EgoState],
        with_coc: bool,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        seed: int = DEFAULT_SEED,
    ) -> "InferenceRequest":
        """Build a request with the token budget implied by the CoC flag."""
        return cls(
            clip_id=clip_id,
            frames=tuple(frames),
            ego_history=tuple(ego_history),
            with_coc=with_coc,
            max_new_tokens=COC_MAX_NEW_TOKENS if with_coc else NO_COC_MAX_NEW_TOKENS,
            temperature=temperature,
            top_p=top_p,
            seed=seed,
        )

    def to_wire(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "frames": [f if isinstance(f, str) else dict(f) for f in self.frames],
            "ego_history": [s.to_dict() for s in self.ego_history],
            "with_coc": self.with_coc,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class InferenceResponse:
    trajectory: Trajectory
    coc: str | None
    latency_ms: float

    def to_wire(self) -> dict:
        d: dict = {"trajectory": self.trajectory.to_list(), "latency_ms": self.latency_ms}
        if self.coc is not None:
            d["coc"] = self.coc
        return d


def parse_request(d: dict) -> InferenceRequest:
    """Validate an incoming wire request (the server side of the protocol)."""
    if not isinstance(d, dict):
        raise ProtocolViolationError(f"request must be an object, got {type(d).__name__}")
    try:
        frames_raw = d["frames"]
        if not isinstance(frames_raw, list):
            raise ProtocolViolationError("frames must be a list")
        frames: list = []
        for f in frames_raw:
            if isinstance(f, str):
                frames.append(f)
            elif isinstance(f, dict) and isinstance(f.get("b64"), str):
                frames.append({"b64": f["b64"]})
            else:
                raise ProtocolViolationError(f"frame must be a path or {{'b64': ...}}, got {f!r:.80}")
        ego = tuple(EgoState.from_dict(s) for s in d["ego_history"])
        return InferenceRequest(
            clip_id=str(d["clip_id"]),
            frames=tuple(frames),
            ego_history=ego,
            with_coc=bool(d["with_coc"]),
            max_new_tokens=int(d["max_new_tokens"]),
            temperature=float(d.get("temperature", DEFAULT_TEMPERATURE)),
            top_p=float(d.get("top_p", DEFAULT_TOP_P)),
            seed=int(d.get("seed", DEFAULT_SEED)),
        )
    except KeyError as exc:
        raise ProtocolViolationError(f"request missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError, ValidationError) as exc:
        raise ProtocolViolationError(f"request invalid: {exc}") from exc


def error_frame(code: str, message: str) -> dict:
    return {"error": code, "message": message}


def validate_response(d: dict, request: InferenceRequest, fallback_latency_ms: float) -> InferenceResponse:
    """Validate a backend reply against the request's contract."""
    if not isinstance(d, dict):
        raise MalformedResponseError(f"response must be an object, got {type(d).__name__}")
    if "error" in d:
        raise RemoteBackendError(str(d.get("error")), str(d.get("message", "")))
    traj_raw = d.get("trajectory")
    if not isinstance(traj_raw, list):
        raise MalformedResponseError(f"clip {request.clip_id}: response missing 'trajectory' list")
    if len(traj_raw) != TRAJECTORY_LEN:
        raise TrajectoryShapeError(
            f"clip {request.clip_id}: expected {TRAJECTORY_LEN} waypoints, got {len(traj_raw)}"
        )
    try:
        trajectory = Trajectory.from_list(traj_raw)
    except (ValidationError, ValueError, TypeError) as exc:
        raise MalformedResponseError(f"clip {request.clip_id}: bad trajectory: {exc}") from exc
    coc = d.get("coc")
    if coc is not None and not isinstance(coc, str):
        raise MalformedResponseError(f"clip {request.clip_id}: coc must be text")
    if not request.with_coc and coc:
        raise ProtocolViolationError(
            f"clip {request.clip_id}: response carries CoC text but with_coc was false"
        )
    if request.with_coc and not coc:
        raise ProtocolViolationError(
            f"clip {request.clip_id}: response missing CoC text despite with_coc=true"
        )
    latency_raw = d.get("latency_ms")
    try:
        latency = float(latency_raw) if latency_raw is not None else float(fallback_latency_ms)
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"clip {request.clip_id}: bad latency_ms") from exc
    return InferenceResponse(trajectory=trajectory, coc=coc if coc else None, latency_ms=latency)


def encode_frame_inline(img: np.ndarray) -> dict:
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return {"b64": base64.b64encode(buf.getvalue()).decode("ascii")}


class Transport(Protocol):
    def raw_roundtrip(self, text: str) -> dict: ...
    def infer(self, request: InferenceRequest) -> InferenceResponse: ...


class StdioTransport:
    """Line-delimited JSON over a spawned subprocess's standard streams.

    Requests are answered strictly in order, so calls are serialized under a
    lock. A reader thread decouples readline from the timeout.
    """

    def __init__(self, cmd: Sequence[str], timeout_s: float = DEFAULT_TIMEOUT_S) -> None:
        self.timeout_s = timeout_s
        try:
            self._proc = subprocess.Popen(
                list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as exc:
            raise BackendConnectionError(f"failed to spawn backend {cmd!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def raw_roundtrip(self, text: str) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise BackendConnectionError("backend process has exited")
            assert self._proc.stdin is not None
            try:
                self._proc.stdin.write(text + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BackendConnectionError(f"backend pipe closed: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout_s)
            except queue.Empty:
                raise BackendTimeoutError(f"no response within {self.timeout_s} s") from None
            if line is None:
                raise BackendConnectionError("backend closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"response is not valid JSON: {exc}") from exc

    def infer(self, request: InferenceRequest) -> InferenceResponse:
        started = time.monotonic()
        reply = self.raw_roundtrip(json.dumps(request.to_wire()))
        elapsed_ms = (time.monotonic() - started) * 1000.0
        return validate_response(reply, request, fallback_latency_ms=elapsed_ms)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "StdioTransport":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class HttpTransport:
    """One JSON request per POST to a local endpoint, bounded in-flight."""

    def __init__(
        self,
        url: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ) -> None:
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.url = url
        self.timeout_s = timeout_s
        self._slots = threading.Semaphore(max_in_flight)

    def raw_roundtrip(self, text: str) -> dict:
        req = urllib.request.Request(
            self.url, data=text.encode("utf-8"),
            headers={"Content-Type": "application/json"}, method="POST",
        )
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    body = resp.read().decode("utf-8")
            except urllib.error.HTTPError as exc:
                body = exc.read().decode("utf-8", errors="replace")
                try:
                    frame = json.loads(body)
                except json.JSONDecodeError:
                    raise MalformedResponseError(
                        f"HTTP {exc.code} with non-JSON body: {body[:120]!r}"
                    ) from exc
                if isinstance(frame, dict) and "error" in frame:
                    raise RemoteBackendError(str(frame["error"]), str(frame.get("message", ""))) from exc
                raise MalformedResponseError(f"HTTP {exc.code}: {body[:120]!r}") from exc
            except socket.timeout as exc:
                raise BackendTimeoutError(f"no response within {self.timeout_s} s") from exc
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, socket.timeout):
                    raise BackendTimeoutError(f"no response within {self.timeout_s} s") from exc
                raise BackendConnectionError(f"cannot reach {self.url}: {exc.reason}") from exc
        try:
            return json.loads(body)
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"response is not valid JSON: {exc}") from exc

    def infer(self, request: InferenceRequest) -> InferenceResponse:
        started = time.monotonic()
        reply = self.raw_roundtrip(json.dumps(request.to_wire()))
        elapsed_ms = (time.monotonic() - started) * 1000.0
        return validate_response(reply, request, fallback_latency_ms=elapsed_ms)


def remote_infer(transport: Transport, request: InferenceRequest) -> InferenceResponse:
    """Send one request through a transport and validate the reply."""
    return transport.infer(request)


class Backend(Protocol):
    """What the campaign runner needs from a model."""

    def infer(
        self, clip: Clip, frames: Sequence[np.ndarray], with_coc: bool, condition: str = "clean"
    ) -> InferenceResponse: ...


DEFAULT_FLIP_TEMPLATES = (
    "Stop immediately because an obstacle blocks the path ahead.",
    "Keep lane to continue driving since no critical agent needs attention.",
    "Slow down and yield because a pedestrian is crossing near the intersection.",
)


@dataclass(frozen=True)
class MockModelConfig:
    """Parameters of the deterministic mock model.

    The mock displaces the ground-truth trajectory laterally by

        D = noise_floor_m + deviation_gain * energy
            + flip_deviation_boost_m (when the CoC flips)
            + a clip-jittered ablation_penalty_m (when with_coc is false)

    along a clip-keyed unit direction, and flips the CoC text to a template
    variant when the perturbation energy exceeds the clip's threshold. The
    threshold is log-uniform in [flip_threshold_lo, flip_threshold_hi], keyed
    by clip id, unless overridden per clip. Every quantity is a pure function
    of (clip, frames, config, with_coc), so responses are identical across
    runs and thread counts.
    """

    deviation_gain: float = 0.005
    noise_floor_m: float = 0.25
    flip_threshold_lo: float = 5.0
    flip_threshold_hi: float = 160.0
    flip_deviation_boost_m: float = 1.0
    ablation_penalty_m: float = 0.30
    flip_threshold_overrides: Mapping[str, float] = field(default_factory=dict)
    templates: tuple[str, ...] = DEFAULT_FLIP_TEMPLATES

    def __post_init__(self) -> None:
        if self.deviation_gain < 0:
            raise ValidationError(f"deviation_gain must be >= 0, got {self.deviation_gain}")
        if self.noise_floor_m < 0 or self.ablation_penalty_m < 0 or self.flip_deviation_boost_m < 0:
            raise ValidationError("mock distances must be >= 0")
        if not 0 < self.flip_threshold_lo <= self.flip_threshold_hi:
            raise ValidationError(
                f"need 0 < flip_threshold_lo <= flip_threshold_hi, got "
                f"[{self.flip_threshold_lo}, {self.flip_threshold_hi}]"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "MockModelConfig":
        known = {
            "deviation_gain", "noise_floor_m", "flip_threshold_lo", "flip_threshold_hi",
            "flip_deviation_boost_m", "ablation_penalty_m", "flip_threshold_overrides",
            "templates",
        }
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown mock config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "templates" in kwargs:
            kwargs["templates"] = tuple(kwargs["templates"])
        return cls(**kwargs)


def _unit_hash(material: str) -> float:
    """Deterministic float in [0, 1) from a string."""
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def flip_threshold(clip_id: str, config: MockModelConfig) -> float:
    """The clip's CoC flip threshold in energy units."""
    if clip_id in config.flip_threshold_overrides:
        return float(config.flip_threshold_overrides[clip_id])
    u = _unit_hash(f"flip_threshold|{clip_id}")
    lo, hi = config.flip_threshold_lo, config.flip_threshold_hi
    return lo * (hi / lo) ** u


def _flip_variants(clean_coc: str, config: MockModelConfig) -> tuple[str, ...]:
    # The final variant differs from the clean text only by punctuation, the
    # one designed source of paraphrase_only flips.
    return tuple(config.templates) + (clean_coc + ".",)


def mock_infer(
    clip: Clip,
    perturbed_frames: Sequence[np.ndarray],
    config: MockModelConfig,
    with_coc: bool,
    clean_frames: Sequence[np.ndarray] | None = None,
    frames_root: str | Path | None = None,
) -> InferenceResponse:
    """Deterministic synthetic model with analytically known coupling.

    Clean frames come from ``clean_frames`` when given, otherwise from the
    clip's frame paths resolved against ``frames_root`` (or as-is).
    """
    if clean_frames is None:
        from .images import load_image

        root = Path(frames_root) if frames_root is not None else Path(".")
        clean_frames = [load_image(root / f) for f in clip.frames]
    if len(clean_frames) != len(perturbed_frames):
        raise ValidationError(
            f"clip {clip.clip_id}: {len(perturbed_frames)} frames given, "
            f"{len(clean_frames)} clean frames expected"
        )
    energy = float(
        np.mean([perturbation_energy(c, p) for c, p in zip(clean_frames, perturbed_frames)])
    )
    flipped = energy > flip_threshold(clip.clip_id, config)

    displacement = config.noise_floor_m + config.deviation_gain * energy
    if flipped:
        displacement += config.flip_deviation_boost_m
    if not with_coc:
        jitter = 0.8 + 0.4 * _unit_hash(f"ablation|{clip.clip_id}")
        displacement += config.ablation_penalty_m * jitter

    theta = 2.0 * math.pi * _unit_hash(f"direction|{clip.clip_id}")
    offset = np.array([math.cos(theta), math.sin(theta)]) * displacement
    trajectory = Trajectory(clip.gt_trajectory.waypoints + offset)

    coc: str | None = None
    if with_coc:
        if flipped:
            variants = _flip_variants(clip.clean_coc, config)
            idx = int(_unit_hash(f"variant|{clip.clip_id}|{energy:.6f}") * len(variants))
            coc = variants[min(idx, len(variants) - 1)]
        else:
            coc = clip.clean_coc

    latency_ms = 20.0 + 30.0 * _unit_hash(f"latency|{clip.clip_id}|{energy:.6f}|{with_coc}")
    return InferenceResponse(trajectory=trajectory, coc=coc, latency_ms=latency_ms)


class MockBackend:
    """Backend wrapper around mock_infer with cached clean frames."""

    def __init__(
        self, clips: Sequence[Clip], frames_root: str | Path, config: MockModelConfig | None = None
    ) -> None:
        self.config = config or MockModelConfig()
        self.frames_root = Path(frames_root)
        self._clips = {c.clip_id: c for c in clips}
        self._clean_cache: dict[str, list[np.ndarray]] = {}
        self._cache_lock = threading.Lock()
        self._count_lock = threading.Lock()
        self.inference_count = 0

    def _clean_frames(self, clip: Clip) -> list[np.ndarray]:
        with self._cache_lock:
            cached = self._clean_cache.get(clip.clip_id)
        if cached is not None:
            return cached
        from .images import load_image

        frames = [load_image(self.frames_root / f) for f in clip.frames]
        with self._cache_lock:
            self._clean_cache[clip.clip_id] = frames
        return frames

    def infer(
        self, clip: Clip, frames: Sequence[np.ndarray], with_coc: bool, condition: str = "clean"
    ) -> InferenceResponse:
        if clip.clip_id not in self._clips:
            raise BackendConnectionError(f"mock backend has no clip {clip.clip_id!r}")
        with self._count_lock:
            self.inference_count += 1
        return mock_infer(
            clip, frames, self.config, with_coc, clean_frames=self._clean_frames(clip)
        )


class RemoteBackend:
    """Backend that ships frames to a transport, by path or inline."""

    def __init__(
        self,
        transport: Transport,
        frames_dir: str | Path | None = None,
        inline: bool = False,
        seed: int = DEFAULT_SEED,
    ) -> None:
        if not inline and frames_dir is None:
            raise ValidationError("RemoteBackend needs frames_dir unless inline=True")
        self.transport = transport
        self.frames_dir = Path(frames_dir) if frames_dir is not None else None
        self.inline = inline
        self.seed = seed
        self._count_lock = threading.Lock()
        self.inference_count = 0

    def _frame_payload(self, clip: Clip, frames: Sequence[np.ndarray], condition: str) -> list:
        if self.inline:
            return [encode_frame_inline(f) for f in frames]
        from .images import save_image

        out: list[str] = []
        for i, frame in enumerate(frames):
            path = self.frames_dir / clip.clip_id / condition / f"frame_{i:02d}.png"
            if not path.is_file():
                save_image(frame, path)
            out.append(str(path.resolve()))
        return out

    def infer(
        self, clip: Clip, frames: Sequence[np.ndarray], with_coc: bool, condition: str = "clean"
    ) -> InferenceResponse:
        request = InferenceRequest.build(
            clip_id=clip.clip_id,
            frames=self._frame_payload(clip, frames, condition),
            ego_history=clip.ego_history,
            with_coc=with_coc,
            seed=self.seed,
        )
        with self._count_lock:
            self.inference_count += 1
        return remote_infer(self.transport, request)


def constant_velocity_baseline(ego_history: Sequence[EgoState]) -> Trajectory:
    """Straight-line rollout from the last ego state, 64 waypoints at 0.1 s."""
    if not ego_history:
        raise ValidationError("constant_velocity_baseline needs at least one ego state")
    last = ego_history[-1]
    steps = np.arange(1, TRAJECTORY_LEN + 1, dtype=np.float64) * TRAJECTORY_DT
    pts = np.column_stack([last.x + last.vx * steps, last.y + last.vy * steps])
    return Trajectory(pts)
