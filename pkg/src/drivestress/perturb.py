"""Calibrated sensor corruptions.

Every stochastic corruption draws from a counter-based stream (Philox) keyed
by a stable hash of (campaign_seed, clip_id, frame_index, perturbation kind),
so any frame's corruption can be regenerated in isolation and identically on
any platform. Float results are rounded half away from zero, then clamped to
[0, 255] before the uint8 cast.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .types import DEFAULT_AIRLIGHT, PerturbationSpec, validate_image

DEFAULT_SEED = 42


@dataclass(frozen=True)
class SeedDerivation:
    """Identifies one corruption stream within a campaign."""

    campaign_seed: int
    clip_id: str
    frame_index: int
    perturbation_kind: str

    def stream_key(self) -> int:
        """128-bit Philox key, a pure function of the four fields."""
        material = f"{self.campaign_seed}|{self.clip_id}|{self.frame_index}|{self.perturbation_kind}"
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        return int.from_bytes(digest[:16], "big")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.stream_key()))


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255], cast to uint8."""
    rounded = np.copysign(np.floor(np.abs(values) + 0.5), values)
    return np.clip(rounded, 0.0, 255.0).astype(np.uint8)


def gaussian_noise(img: np.ndarray, sigma: float, seed: SeedDerivation) -> np.ndarray:
    """Additive iid Gaussian pixel noise with standard deviation ``sigma``."""
    validate_image(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    noise = seed.generator().normal(0.0, sigma, size=img.shape)
    return quantize(img.astype(np.float64) + noise)


def photometric_scale(img: np.ndarray, factor: float) -> np.ndarray:
    """Multiplicative brightness change (darken below 1, brighten above)."""
    validate_image(img)
    if factor <= 0:
        raise ValueError(f"brightness factor must be > 0, got {factor}")
    return quantize(img.astype(np.float64) * factor)


def fog_blend(
    img: np.ndarray,
    alpha: float,
    airlight: tuple[int, int, int] = DEFAULT_AIRLIGHT,
    vertical_gradient: bool = False,
) -> np.ndarray:
    """Homogeneous fog: I' = (1 - alpha) * I + alpha * A.

    With vertical_gradient, alpha is scaled linearly per row from 1.5x at the
    top row to 0.5x at the bottom (clipped to [0, 1]) as a crude depth proxy,
    since distance grows toward the horizon in a forward camera.
    """
    validate_image(img)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    a = np.full((img.shape[0], 1, 1), alpha, dtype=np.float64)
    if vertical_gradient and img.shape[0] > 1:
        rows = np.linspace(1.5, 0.5, img.shape[0]).reshape(-1, 1, 1)
        a = np.clip(alpha * rows, 0.0, 1.0)
    air = np.asarray(airlight, dtype=np.float64).reshape(1, 1, 3)
    return quantize((1.0 - a) * img.astype(np.float64) + a * air)


def apply_perturbation(
    img: np.ndarray,
    spec: PerturbationSpec,
    seed: SeedDerivation,
    vertical_gradient: bool = False,
) -> np.ndarray:
    """Apply ``spec`` to one frame; clean is a byte-identical copy."""
    if spec.kind == "clean":
        validate_image(img)
        return img.copy()
    if spec.kind == "noise":
        return gaussian_noise(img, spec.sigma, seed)
    if spec.kind in ("dark", "bright"):
        return photometric_scale(img, spec.brightness_factor)
    if spec.kind in ("fog_light", "fog_heavy"):
        return fog_blend(img, spec.alpha, spec.airlight, vertical_gradient)
    raise ValueError(f"unknown perturbation kind {spec.kind!r}")


def perturbation_energy(clean: np.ndarray, perturbed: np.ndarray) -> float:
    """Mean absolute per-pixel difference in intensity units."""
    validate_image(clean)
    validate_image(perturbed)
    if clean.shape != perturbed.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {perturbed.shape}")
    diff = np.abs(clean.astype(np.int16) - perturbed.astype(np.int16))
    return float(np.mean(diff))
