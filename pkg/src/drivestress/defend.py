"""Input-preprocessing defenses applied to perturbed frames before inference.

All filters use reflect-101 borders (numpy ``pad(mode="reflect")``) and return
uint8 images of the input shape. The Gaussian kernel sigma follows the common
vision-library convention sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8, so 3x3 uses
0.8 and 5x5 uses 1.1. Bilateral defaults (diameter 5, sigma_color 75,
sigma_space 75) are assumptions; the defense table names only the kinds.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .perturb import quantize
from .types import validate_image

DEFENSE_KINDS = ("none", "gaussian3", "gaussian5", "median3", "median5", "bilateral", "jpeg75")


class DefenseError(ValueError):
    """A defense spec or application is invalid."""


@dataclass(frozen=True)
class DefenseSpec:
    kind: str
    diameter: int = 5
    sigma_color: float = 75.0
    sigma_space: float = 75.0
    quality: int = 75

    def __post_init__(self) -> None:
        if self.kind not in DEFENSE_KINDS:
            raise DefenseError(f"unknown defense kind {self.kind!r}; expected one of {DEFENSE_KINDS}")
        if self.diameter % 2 != 1 or self.diameter < 1:
            raise DefenseError(f"bilateral diameter must be odd and positive, got {self.diameter}")
        if not 1 <= self.quality <= 100:
            raise DefenseError(f"jpeg quality must be in [1, 100], got {self.quality}")
        if self.sigma_color <= 0 or self.sigma_space <= 0:
            raise DefenseError("bilateral sigmas must be positive")

    @property
    def label(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "bilateral":
            d.update(diameter=self.diameter, sigma_color=self.sigma_color,
                     sigma_space=self.sigma_space)
        if self.kind == "jpeg75":
            d["quality"] = self.quality
        return d

    @classmethod
    def from_dict(cls, d: dict | str) -> "DefenseSpec":
        if isinstance(d, str):
            return cls(kind=d)
        if "kind" not in d:
            raise DefenseError("defense spec missing 'kind'")
        return cls(
            kind=d["kind"],
            diameter=int(d.get("diameter", 5)),
            sigma_color=float(d.get("sigma_color", 75.0)),
            sigma_space=float(d.get("sigma_space", 75.0)),
            quality=int(d.get("quality", 75)),
        )


NONE = DefenseSpec(kind="none")


def gaussian_kernel_1d(kernel: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps for an odd kernel size."""
    if kernel % 2 != 1 or kernel < 1:
        raise DefenseError(f"kernel size must be odd and positive, got {kernel}")
    sigma = 0.3 * ((kernel - 1) / 2 - 1) + 0.8
    half = kernel // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(xs**2) / (2.0 * sigma**2))
    return w / w.sum()


def _pad_reflect(img: np.ndarray, r: int) -> np.ndarray:
    return np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")


def gaussian_blur(img: np.ndarray, kernel: int) -> np.ndarray:
    """Separable normalized Gaussian convolution with reflect-101 borders."""
    validate_image(img)
    w = gaussian_kernel_1d(kernel)
    r = kernel // 2
    padded = _pad_reflect(img, r).astype(np.float64)
    h, wd = img.shape[:2]
    rows = np.zeros((h, wd + 2 * r, 3), dtype=np.float64)
    for i, wi in enumerate(w):
        rows += wi * padded[i : i + h]
    out = np.zeros((h, wd, 3), dtype=np.float64)
    for j, wj in enumerate(w):
        out += wj * rows[:, j : j + wd]
    return quantize(out)


def median_filter(img: np.ndarray, kernel: int) -> np.ndarray:
    """Per-channel window median with reflect-101 borders."""
    validate_image(img)
    if kernel % 2 != 1 or kernel < 1:
        raise DefenseError(f"kernel size must be odd and positive, got {kernel}")
    r = kernel // 2
    padded = _pad_reflect(img, r)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(0, 1))
    return np.median(windows.reshape(*img.shape, -1), axis=-1).astype(np.uint8)


def bilateral_filter(
    img: np.ndarray, diameter: int = 5, sigma_color: float = 75.0, sigma_space: float = 75.0
) -> np.ndarray:
    """Edge-preserving smoothing: spatial Gaussian times per-channel range Gaussian."""
    validate_image(img)
    if diameter % 2 != 1 or diameter < 1:
        raise DefenseError(f"diameter must be odd and positive, got {diameter}")
    r = diameter // 2
    padded = _pad_reflect(img, r).astype(np.float64)
    center = img.astype(np.float64)
    h, w = img.shape[:2]
    acc = np.zeros((h, w, 3), dtype=np.float64)
    norm = np.zeros((h, w, 3), dtype=np.float64)
    inv2sc = 1.0 / (2.0 * sigma_color**2)
    inv2ss = 1.0 / (2.0 * sigma_space**2)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            w_sp = np.exp(-(dy * dy + dx * dx) * inv2ss)
            w_rng = np.exp(-((shifted - center) ** 2) * inv2sc)
            weight = w_sp * w_rng
            acc += weight * shifted
            norm += weight
    return quantize(acc / norm)


def jpeg_roundtrip(img: np.ndarray, quality: int = 75) -> np.ndarray:
    """Encode to baseline JPEG at the given quality and decode back."""
    validate_image(img)
    if not 1 <= quality <= 100:
        raise DefenseError(f"quality must be in [1, 100], got {quality}")
    buf = io.BytesIO()
    try:
        Image.fromarray(img, mode="RGB").save(buf, format="JPEG", quality=quality)
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DefenseError(f"jpeg round-trip failed: {exc}") from exc
    if out.shape != img.shape:
        raise DefenseError(f"jpeg round-trip changed shape: {img.shape} -> {out.shape}")
    return out


def apply_defense(img: np.ndarray, spec: DefenseSpec) -> np.ndarray:
    """Dispatch on spec.kind; ``none`` is a byte-identical copy."""
    if spec.kind == "none":
        validate_image(img)
        return img.copy()
    if spec.kind == "gaussian3":
        return gaussian_blur(img, 3)
    if spec.kind == "gaussian5":
        return gaussian_blur(img, 5)
    if spec.kind == "median3":
        return median_filter(img, 3)
    if spec.kind == "median5":
        return median_filter(img, 5)
    if spec.kind == "bilateral":
        return bilateral_filter(img, spec.diameter, spec.sigma_color, spec.sigma_space)
    if spec.kind == "jpeg75":
        return jpeg_roundtrip(img, spec.quality)
    raise DefenseError(f"unknown defense kind {spec.kind!r}")
