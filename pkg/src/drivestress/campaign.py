"""Campaign configuration and grid execution.

A campaign runs clip x condition x defense x ablation-arm against a backend,
writing one EvalRecord per cell to ``records.jsonl``. Clean inference runs
once per (clip, arm) and is reused as the paired reference for every
perturbed condition of that clip. Reruns skip cells already present in the
record file; the clean reference predictions are persisted in a sidecar
(``clean_predictions.jsonl``) so a resume re-executes only missing cells.

Concurrency is per clip: each worker produces its clip's block of records,
and the main thread writes blocks in manifest order, so output bytes do not
depend on the parallelism level.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .defend import NONE as DEFENSE_NONE
from .defend import DefenseError, DefenseSpec, apply_defense
from .images import load_image
from .manifest import ManifestError, load_manifest
from .modelio import (
    Backend,
    BackendConnectionError,
    BackendError,
    BackendTimeoutError,
    HttpTransport,
    InferenceResponse,
    MalformedResponseError,
    MockBackend,
    MockModelConfig,
    ProtocolViolationError,
    RemoteBackend,
    RemoteBackendError,
    StdioTransport,
    TrajectoryShapeError,
)
from .perturb import SeedDerivation, apply_perturbation
from .records import EvalRecord, read_records, write_records
from .types import Clip, PerturbationSpec, Trajectory, ValidationError, default_attacks

ENDPOINT_ENV_VAR = "DRIVESTRESS_ENDPOINT"

ERROR_CODES = {
    BackendConnectionError: "connection",
    BackendTimeoutError: "timeout",
    MalformedResponseError: "malformed_response",
    TrajectoryShapeError: "trajectory_shape",
    ProtocolViolationError: "protocol_violation",
    RemoteBackendError: "remote_error",
}


class ConfigError(ValueError):
    """Campaign configuration is invalid."""


class AnalysisError(ValueError):
    """Analysis cannot proceed on the given records."""


@dataclass(frozen=True)
class CampaignConfig:
    manifest: Path
    out_dir: Path
    backend_mode: str = "mock"
    endpoint: str | None = None
    command: tuple[str, ...] | None = None
    mock: MockModelConfig = field(default_factory=MockModelConfig)
    perturbations: tuple[PerturbationSpec, ...] = field(default_factory=lambda: tuple(default_attacks()))
    defenses: tuple[DefenseSpec, ...] = ()
    ablation: bool = False
    seed: int = 42
    unsafe_threshold_m: float = 5.0
    mild_max_m: float = 10.0
    severe_min_m: float = 30.0
    parallelism: int = 4
    fog_vertical_gradient: bool = False
    frames_inline: bool = False
    timeout_s: float = 30.0
    bootstrap_resamples: int = 10000

    def __post_init__(self) -> None:
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.backend_mode not in ("mock", "http", "stdio"):
            raise ConfigError(f"unknown backend mode {self.backend_mode!r}")
        if self.backend_mode == "stdio" and not self.command:
            raise ConfigError("stdio backend requires a command")
        if not self.perturbations:
            raise ConfigError("campaign needs at least one perturbation")
        labels = [p.label for p in self.perturbations]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate perturbation labels: {labels}")
        if any(p.kind == "clean" for p in self.perturbations):
            raise ConfigError("the clean condition is implicit; do not list it as a perturbation")
        if any(d.kind == "none" for d in self.defenses):
            raise ConfigError("the no-defense arm is implicit; do not list 'none' as a defense")
        if not self.unsafe_threshold_m > 0:
            raise ConfigError(f"unsafe_threshold_m must be > 0, got {self.unsafe_threshold_m}")
        if not 0 < self.mild_max_m <= self.severe_min_m:
            raise ConfigError(
                f"severity buckets overlap: mild_max_m={self.mild_max_m}, "
                f"severe_min_m={self.severe_min_m}"
            )
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be >= 1")

    @property
    def records_path(self) -> Path:
        return self.out_dir / "records.jsonl"

    @property
    def failures_path(self) -> Path:
        return self.out_dir / "failures.jsonl"

    @property
    def clean_sidecar_path(self) -> Path:
        return self.out_dir / "clean_predictions.jsonl"

    @property
    def arms(self) -> tuple[bool, ...]:
        return (True, False) if self.ablation else (True,)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "CampaignConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"config must be an object, got {type(doc).__name__}")
        known = {
            "manifest", "out_dir", "backend", "mock", "perturbations", "defenses",
            "ablation", "seed", "unsafe_threshold_m", "severity", "parallelism",
            "fog_vertical_gradient", "frames_inline", "timeout_s", "bootstrap_resamples",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = Path(base_dir)
        try:
            manifest = doc["manifest"]
            out_dir = doc["out_dir"]
        except KeyError as exc:
            raise ConfigError(f"config missing field {exc.args[0]!r}") from exc

        backend = doc.get("backend", {"mode": "mock"})
        if not isinstance(backend, dict) or "mode" not in backend:
            raise ConfigError("config 'backend' must be an object with a 'mode'")
        try:
            mock = MockModelConfig.from_dict(doc.get("mock", {}))
            perturbations = tuple(
                PerturbationSpec.from_dict(p) for p in doc["perturbations"]
            ) if "perturbations" in doc else tuple(default_attacks())
            defenses = tuple(DefenseSpec.from_dict(d) for d in doc.get("defenses", []))
        except (ValidationError, DefenseError) as exc:
            raise ConfigError(str(exc)) from exc
        severity = doc.get("severity", {})
        if not isinstance(severity, dict):
            raise ConfigError("config 'severity' must be an object")
        try:
            return cls(
                manifest=(base / manifest),
                out_dir=(base / out_dir),
                backend_mode=backend["mode"],
                endpoint=backend.get("endpoint"),
                command=tuple(backend["command"]) if "command" in backend else None,
                mock=mock,
                perturbations=perturbations,
                defenses=defenses,
                ablation=bool(doc.get("ablation", False)),
                seed=int(doc.get("seed", 42)),
                unsafe_threshold_m=float(doc.get("unsafe_threshold_m", 5.0)),
                mild_max_m=float(severity.get("mild_max_m", 10.0)),
                severe_min_m=float(severity.get("severe_min_m", 30.0)),
                parallelism=int(doc.get("parallelism", 4)),
                fog_vertical_gradient=bool(doc.get("fog_vertical_gradient", False)),
                frames_inline=bool(doc.get("frames_inline", False)),
                timeout_s=float(doc.get("timeout_s", 30.0)),
                bootstrap_resamples=int(doc.get("bootstrap_resamples", 10000)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config invalid: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "CampaignConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)


def resolve_backend(config: CampaignConfig, clips: Sequence[Clip]) -> Backend:
    """Build the backend named by the config; DRIVESTRESS_ENDPOINT overrides http."""
    if config.backend_mode == "mock":
        return MockBackend(clips, frames_root=config.manifest.parent, config=config.mock)
    if config.backend_mode == "http":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR) or config.endpoint
        if not endpoint:
            raise ConfigError(
                f"http backend needs an endpoint (config or {ENDPOINT_ENV_VAR})"
            )
        transport = HttpTransport(endpoint, timeout_s=config.timeout_s)
        return RemoteBackend(
            transport,
            frames_dir=None if config.frames_inline else config.out_dir / "frames_cache",
            inline=config.frames_inline,
            seed=config.seed,
        )
    if config.backend_mode == "stdio":
        transport = StdioTransport(config.command, timeout_s=config.timeout_s)
        return RemoteBackend(
            transport,
            frames_dir=None if config.frames_inline else config.out_dir / "frames_cache",
            inline=config.frames_inline,
            seed=config.seed,
        )
    raise ConfigError(f"unknown backend mode {config.backend_mode!r}")


@dataclass(frozen=True)
class Failure:
    clip_id: str
    condition: str
    defense: str
    with_coc: bool
    error: str
    message: str

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id, "condition": self.condition, "defense": self.defense,
            "with_coc": self.with_coc, "error": self.error, "message": self.message,
        }


@dataclass(frozen=True)
class RunResult:
    records_path: Path
    failures_path: Path
    records_written: int
    failures: int
    inferences: int
    failure_rows: tuple[Failure, ...] = ()


@dataclass(frozen=True)
class _CleanPrediction:
    trajectory: Trajectory
    coc: str
    latency_ms: float


def _load_clean_sidecar(path: Path) -> dict[tuple[str, bool], _CleanPrediction]:
    out: dict[tuple[str, bool], _CleanPrediction] = {}
    if not path.is_file():
        return out
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out[(d["clip_id"], bool(d["with_coc"]))] = _CleanPrediction(
                trajectory=Trajectory.from_list(d["trajectory"]),
                coc=d.get("coc") or "",
                latency_ms=float(d.get("latency_ms", 0.0)),
            )
    return out


def _error_code(exc: BackendError) -> str:
    for cls, code in ERROR_CODES.items():
        if isinstance(exc, cls):
            return code
    return "backend_error"


def _make_record(
    clip: Clip,
    spec: PerturbationSpec,
    defense: DefenseSpec,
    with_coc: bool,
    response: InferenceResponse,
    clean: _CleanPrediction,
    clean_ade: float,
    seed: int,
) -> EvalRecord:
    pred = response.trajectory
    coc_perturbed = response.coc or ""
    return EvalRecord(
        clip_id=clip.clip_id,
        condition=spec.label,
        kind=spec.kind,
        defense=defense.label,
        with_coc=with_coc,
        ade_m=metrics.ade(pred, clip.gt_trajectory),
        fde_m=metrics.fde(pred, clip.gt_trajectory),
        delta_ade_m=metrics.ade(pred, clip.gt_trajectory) - clean_ade,
        l2_deviation_m=metrics.l2_deviation(pred, clean.trajectory),
        coc_clean=clean.coc,
        coc_perturbed=coc_perturbed,
        coc_changed=metrics.coc_changed(clean.coc, coc_perturbed),
        word_similarity=metrics.jaccard_similarity(clean.coc, coc_perturbed),
        seed=seed,
        latency_ms=response.latency_ms,
        sigma=spec.sigma,
        brightness_factor=spec.brightness_factor,
        alpha=spec.alpha,
    )


@dataclass
class _ClipBlock:
    records: list[EvalRecord]
    failures: list[Failure]
    new_cleans: list[dict]
    inferences: int


def _run_clip(
    clip: Clip,
    config: CampaignConfig,
    backend: Backend,
    existing: set[tuple[str, str, str, bool]],
    sidecar: dict[tuple[str, bool], _CleanPrediction],
) -> _ClipBlock:
    block = _ClipBlock(records=[], failures=[], new_cleans=[], inferences=0)
    defenses = (DEFENSE_NONE,) + config.defenses
    clean_spec = PerturbationSpec(kind="clean")

    def missing(spec_label: str, defense_label: str, arm: bool) -> bool:
        return (clip.clip_id, spec_label, defense_label, arm) not in existing

    needs_anything = any(
        missing("clean", "none", arm) for arm in config.arms
    ) or any(
        missing(spec.label, d.label, arm)
        for spec in config.perturbations
        for d in defenses
        for arm in config.arms
    )
    if not needs_anything:
        return block

    clean_frames = [load_image(config.manifest.parent / f) for f in clip.frames]

    cleans: dict[bool, _CleanPrediction] = {}
    clean_ades: dict[bool, float] = {}
    for arm in config.arms:
        arm_missing = missing("clean", "none", arm) or any(
            missing(spec.label, d.label, arm) for spec in config.perturbations for d in defenses
        )
        if not arm_missing:
            continue
        clean = sidecar.get((clip.clip_id, arm))
        if clean is None:
            try:
                block.inferences += 1
                response = backend.infer(clip, clean_frames, arm, "clean")
            except BackendError as exc:
                code = _error_code(exc)
                block.failures.append(
                    Failure(clip.clip_id, "clean", "none", arm, code, str(exc))
                )
                for spec in config.perturbations:
                    for d in defenses:
                        if missing(spec.label, d.label, arm):
                            block.failures.append(
                                Failure(
                                    clip.clip_id, spec.label, d.label, arm,
                                    "clean_reference_unavailable",
                                    f"clean inference failed: {exc}",
                                )
                            )
                continue
            clean = _CleanPrediction(
                trajectory=response.trajectory,
                coc=response.coc or "",
                latency_ms=response.latency_ms,
            )
            block.new_cleans.append(
                {
                    "clip_id": clip.clip_id,
                    "with_coc": arm,
                    "trajectory": clean.trajectory.to_list(),
                    "coc": clean.coc,
                    "latency_ms": clean.latency_ms,
                }
            )
        cleans[arm] = clean
        clean_ades[arm] = metrics.ade(clean.trajectory, clip.gt_trajectory)
        if missing("clean", "none", arm):
            block.records.append(
                _make_record(
                    clip, clean_spec, DEFENSE_NONE, arm,
                    InferenceResponse(
                        trajectory=clean.trajectory,
                        coc=clean.coc or None,
                        latency_ms=clean.latency_ms,
                    ),
                    clean, clean_ades[arm], config.seed,
                )
            )

    for spec in config.perturbations:
        spec_missing = any(
            missing(spec.label, d.label, arm)
            for d in defenses
            for arm in config.arms
            if arm in cleans
        )
        if not spec_missing:
            continue
        perturbed = [
            apply_perturbation(
                frame, spec,
                SeedDerivation(config.seed, clip.clip_id, i, spec.label),
                config.fog_vertical_gradient,
            )
            for i, frame in enumerate(clean_frames)
        ]
        for defense in defenses:
            defense_needed = any(
                missing(spec.label, defense.label, arm) for arm in config.arms if arm in cleans
            )
            if not defense_needed:
                continue
            frames_in = (
                perturbed if defense.kind == "none"
                else [apply_defense(f, defense) for f in perturbed]
            )
            for arm in config.arms:
                if arm not in cleans or not missing(spec.label, defense.label, arm):
                    continue
                try:
                    block.inferences += 1
                    response = backend.infer(clip, frames_in, arm, spec.label)
                except BackendError as exc:
                    block.failures.append(
                        Failure(
                            clip.clip_id, spec.label, defense.label, arm,
                            _error_code(exc), str(exc),
                        )
                    )
                    continue
                block.records.append(
                    _make_record(
                        clip, spec, defense, arm, response,
                        cleans[arm], clean_ades[arm], config.seed,
                    )
                )
    return block


def run_campaign(config: CampaignConfig, backend: Backend | None = None) -> RunResult:
    """Execute the grid, appending new records; resumable and order-stable."""
    try:
        clips = load_manifest(config.manifest)
    except ManifestError as exc:
        raise ConfigError(str(exc)) from exc
    config.out_dir.mkdir(parents=True, exist_ok=True)

    existing: set[tuple[str, str, str, bool]] = set()
    if config.records_path.is_file():
        existing = {r.key for r in read_records(config.records_path)}
    sidecar = _load_clean_sidecar(config.clean_sidecar_path)

    if backend is None:
        backend = resolve_backend(config, clips)

    written = inferences = 0
    failures: list[Failure] = []
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        futures = [
            pool.submit(_run_clip, clip, config, backend, existing, sidecar) for clip in clips
        ]
        for future in futures:
            block = future.result()
            inferences += block.inferences
            if block.records:
                written += write_records(block.records, config.records_path, append=True)
            if block.failures:
                config.failures_path.parent.mkdir(parents=True, exist_ok=True)
                with open(config.failures_path, "a", encoding="utf-8") as fh:
                    for f in block.failures:
                        fh.write(json.dumps(f.to_dict()) + "\n")
                failures.extend(block.failures)
            if block.new_cleans:
                with open(config.clean_sidecar_path, "a", encoding="utf-8") as fh:
                    for entry in block.new_cleans:
                        fh.write(json.dumps(entry) + "\n")
    return RunResult(
        records_path=config.records_path,
        failures_path=config.failures_path,
        records_written=written,
        failures=len(failures),
        inferences=inferences,
        failure_rows=tuple(failures),
    )
