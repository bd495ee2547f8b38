"""Trajectory deviation and CoC text metrics."""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .types import Trajectory

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(text: str) -> str:
    """Collapse all whitespace runs to single spaces and strip the ends."""
    return " ".join(text.split())


def tokenize(text: str) -> list[str]:
    """Lowercased tokens of the normalized text with punctuation removed."""
    return normalize_text(text).translate(_PUNCT_TABLE).lower().split()


@dataclass(frozen=True)
class CoCText:
    """A Chain-of-Causation explanation with its derived comparison forms."""

    raw: str

    @property
    def normalized(self) -> str:
        return normalize_text(self.raw)

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.raw)


def _points(traj: Trajectory | np.ndarray) -> np.ndarray:
    pts = traj.waypoints if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (N, 2) waypoints, got shape {pts.shape}")
    return pts


def _paired(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = _points(a), _points(b)
    if pa.shape[0] != pb.shape[0]:
        raise ValueError(f"waypoint count mismatch: {pa.shape[0]} vs {pb.shape[0]}")
    return pa, pb


def ade(pred: Trajectory | np.ndarray, gt: Trajectory | np.ndarray) -> float:
    """Average displacement error: mean Euclidean distance over paired waypoints."""
    pa, pb = _paired(pred, gt)
    return float(np.mean(np.linalg.norm(pa - pb, axis=1)))


def fde(pred: Trajectory | np.ndarray, gt: Trajectory | np.ndarray) -> float:
    """Final displacement error: Euclidean distance at the last waypoint."""
    pa, pb = _paired(pred, gt)
    return float(np.linalg.norm(pa[-1] - pb[-1]))


def l2_deviation(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray) -> float:
    """L2 norm of the flattened waypoint difference, sqrt(sum_t ||a_t - b_t||^2)."""
    pa, pb = _paired(a, b)
    return float(np.linalg.norm((pa - pb).ravel()))


def delta_ade(ade_attacked: float, ade_clean: float) -> float:
    return ade_attacked - ade_clean


def coc_changed(clean: CoCText | str, perturbed: CoCText | str) -> bool:
    """Flip detector: case-sensitive exact match after whitespace normalization."""
    a = clean.raw if isinstance(clean, CoCText) else clean
    b = perturbed.raw if isinstance(perturbed, CoCText) else perturbed
    return normalize_text(a) != normalize_text(b)


def jaccard_similarity(a: CoCText | str, b: CoCText | str) -> float:
    """Token-set Jaccard similarity; two empty token sets count as identical (1.0)."""
    ta = set(a.tokens if isinstance(a, CoCText) else tokenize(a))
    tb = set(b.tokens if isinstance(b, CoCText) else tokenize(b))
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)
