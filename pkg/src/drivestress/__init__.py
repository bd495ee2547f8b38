"""Stress-testing harness for trajectory-predicting driving models.

Applies calibrated sensor corruptions to clip frames, measures trajectory
deviation and Chain-of-Causation (CoC) stability through a fixed wire
protocol, quantifies the coupling between the two, and evaluates CoC flips
as a runtime safety monitor. Campaigns are deterministic: a (seed, manifest,
config) triple always produces byte-identical records.
"""
from __future__ import annotations

from .analysis import CampaignSummary, analyze, severity_conditioned_defense
from .campaign import (
    AnalysisError,
    CampaignConfig,
    ConfigError,
    RunResult,
    resolve_backend,
    run_campaign,
)
from .defend import DefenseSpec, apply_defense
from .fixtures import generate_fixture_clips
from .manifest import ManifestError, load_manifest, write_manifest
from .metrics import ade, coc_changed, delta_ade, fde, jaccard_similarity, l2_deviation
from .modelio import (
    BackendError,
    InferenceRequest,
    InferenceResponse,
    MockBackend,
    MockModelConfig,
    RemoteBackend,
    constant_velocity_baseline,
    mock_infer,
)
from .monitor import MonitorReport, label_outcomes, monitor_report
from .perturb import SeedDerivation, apply_perturbation, perturbation_energy
from .records import EvalRecord, RecordError, read_records, write_records
from .report import write_report
from .taxonomy import classify_failure, classify_scenario, cross_attack_consistency
from .types import (
    CLEAN,
    Clip,
    EgoState,
    PerturbationSpec,
    Trajectory,
    ValidationError,
    default_attacks,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError",
    "BackendError",
    "CLEAN",
    "CampaignConfig",
    "CampaignSummary",
    "Clip",
    "ConfigError",
    "DefenseSpec",
    "EgoState",
    "EvalRecord",
    "InferenceRequest",
    "InferenceResponse",
    "ManifestError",
    "MockBackend",
    "MockModelConfig",
    "MonitorReport",
    "PerturbationSpec",
    "RecordError",
    "RemoteBackend",
    "RunResult",
    "SeedDerivation",
    "Trajectory",
    "ValidationError",
    "ade",
    "analyze",
    "apply_defense",
    "apply_perturbation",
    "classify_failure",
    "classify_scenario",
    "coc_changed",
    "constant_velocity_baseline",
    "cross_attack_consistency",
    "default_attacks",
    "delta_ade",
    "fde",
    "generate_fixture_clips",
    "jaccard_similarity",
    "l2_deviation",
    "label_outcomes",
    "load_manifest",
    "mock_infer",
    "monitor_report",
    "perturbation_energy",
    "read_records",
    "resolve_backend",
    "run_campaign",
    "severity_conditioned_defense",
    "write_manifest",
    "write_records",
    "write_report",
    "__version__",
]
