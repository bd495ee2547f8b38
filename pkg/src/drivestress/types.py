"""Core domain types: trajectories, ego state, clips, perturbation conditions.

All geometry lives in the ego frame at the prediction timestamp, meters,
x forward and y left. Trajectories are 64 waypoints at 10 Hz (6.4 s horizon).
Images are HxWx3 uint8 RGB arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TRAJECTORY_LEN = 64
TRAJECTORY_DT = 0.1
TRAJECTORY_HORIZON_S = TRAJECTORY_LEN * TRAJECTORY_DT

NOISE_SIGMAS = (10.0, 30.0, 50.0, 70.0)
DARK_FACTOR = 0.4
BRIGHT_FACTOR = 1.6
FOG_LIGHT_ALPHA = 0.3
FOG_HEAVY_ALPHA = 0.7
DEFAULT_AIRLIGHT = (240, 240, 240)

PERTURBATION_KINDS = ("clean", "noise", "dark", "bright", "fog_light", "fog_heavy")


class ValidationError(ValueError):
    """A domain object failed its structural contract."""


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check that ``img`` is an HxWx3 uint8 array and return it."""
    if not isinstance(img, np.ndarray):
        raise ValidationError(f"image must be a numpy array, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"image must have shape (H, W, 3), got {img.shape}")
    if img.dtype != np.uint8:
        raise ValidationError(f"image dtype must be uint8, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"image must be non-empty, got {img.shape}")
    return img


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A predicted or ground-truth path: (64, 2) waypoints, 0.1 s apart."""

    waypoints: np.ndarray
    dt: float = TRAJECTORY_DT

    def __post_init__(self) -> None:
        pts = np.asarray(self.waypoints, dtype=np.float64)
        if pts.shape != (TRAJECTORY_LEN, 2):
            raise ValidationError(
                f"trajectory must have shape ({TRAJECTORY_LEN}, 2), got {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValidationError("trajectory contains non-finite waypoints")
        if not self.dt > 0:
            raise ValidationError(f"trajectory dt must be positive, got {self.dt}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "waypoints", pts)

    @property
    def horizon_s(self) -> float:
        return TRAJECTORY_LEN * self.dt

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.waypoints, other.waypoints)

    def __hash__(self) -> int:
        return hash((self.dt, self.waypoints.tobytes()))

    def to_list(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.waypoints]

    @classmethod
    def from_list(cls, data: Sequence[Sequence[float]], dt: float = TRAJECTORY_DT) -> "Trajectory":
        return cls(waypoints=np.asarray(data, dtype=np.float64).reshape(-1, 2), dt=dt)


@dataclass(frozen=True)
class EgoState:
    """One past ego sample: timestamp (s, <= 0 at prediction time) plus pose and velocity."""

    t: float
    x: float
    y: float
    vx: float
    vy: float

    def __post_init__(self) -> None:
        for name in ("t", "x", "y", "vx", "vy"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ValidationError(f"ego state field {name} must be finite, got {v!r}")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.vx, self.vy)

    def to_dict(self) -> dict:
        return {"t": self.t, "x": self.x, "y": self.y, "vx": self.vx, "vy": self.vy}

    @classmethod
    def from_dict(cls, d: dict) -> "EgoState":
        try:
            return cls(
                t=float(d["t"]), x=float(d["x"]), y=float(d["y"]),
                vx=float(d["vx"]), vy=float(d["vy"]),
            )
        except KeyError as exc:
            raise ValidationError(f"ego state missing field {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class Clip:
    """One evaluation scene: camera frames, ego history, ground truth, clean CoC text."""

    clip_id: str
    frames: tuple[str, ...]
    ego_history: tuple[EgoState, ...]
    gt_trajectory: Trajectory
    clean_coc: str
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.clip_id:
            raise ValidationError("clip_id must be non-empty")
        if not self.frames:
            raise ValidationError(f"clip {self.clip_id}: frames must be non-empty")
        if not self.ego_history:
            raise ValidationError(f"clip {self.clip_id}: ego_history must be non-empty")
        ts = [s.t for s in self.ego_history]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(
                f"clip {self.clip_id}: ego_history timestamps must be strictly increasing"
            )


@dataclass(frozen=True)
class PerturbationSpec:
    """A named image corruption with its calibrated parameters.

    kind        one of clean, noise, dark, bright, fog_light, fog_heavy
    sigma       Gaussian noise standard deviation in intensity units (noise only)
    brightness_factor  multiplicative photometric scale (dark/bright only)
    alpha       fog blend weight in [0, 1] (fog kinds only)
    airlight    fog airlight color, default (240, 240, 240)
    """

    kind: str
    sigma: float | None = None
    brightness_factor: float | None = None
    alpha: float | None = None
    airlight: tuple[int, int, int] = DEFAULT_AIRLIGHT

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValidationError(
                f"unknown perturbation kind {self.kind!r}; expected one of {PERTURBATION_KINDS}"
            )
        if self.kind == "noise":
            if self.sigma is None or not self.sigma >= 0:
                raise ValidationError(f"noise requires sigma >= 0, got {self.sigma!r}")
        elif self.sigma is not None:
            raise ValidationError(f"sigma only applies to noise, not {self.kind}")
        if self.kind in ("dark", "bright"):
            if self.brightness_factor is None or not self.brightness_factor > 0:
                raise ValidationError(
                    f"{self.kind} requires brightness_factor > 0, got {self.brightness_factor!r}"
                )
        elif self.brightness_factor is not None:
            raise ValidationError(f"brightness_factor only applies to dark/bright, not {self.kind}")
        if self.kind in ("fog_light", "fog_heavy"):
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValidationError(f"{self.kind} requires alpha in [0, 1], got {self.alpha!r}")
        elif self.alpha is not None:
            raise ValidationError(f"alpha only applies to fog kinds, not {self.kind}")
        if len(self.airlight) != 3 or any(not 0 <= int(c) <= 255 for c in self.airlight):
            raise ValidationError(f"airlight must be three values in [0, 255], got {self.airlight}")
        object.__setattr__(self, "airlight", tuple(int(c) for c in self.airlight))

    @property
    def label(self) -> str:
        """Stable condition label, e.g. ``noise_30`` or ``fog_heavy``."""
        if self.kind == "noise":
            s = self.sigma
            return f"noise_{int(s) if float(s).is_integer() else s}"
        return self.kind

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.brightness_factor is not None:
            d["brightness_factor"] = self.brightness_factor
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.airlight != DEFAULT_AIRLIGHT:
            d["airlight"] = list(self.airlight)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        if "kind" not in d:
            raise ValidationError("perturbation spec missing 'kind'")
        return cls(
            kind=d["kind"],
            sigma=d.get("sigma"),
            brightness_factor=d.get("brightness_factor"),
            alpha=d.get("alpha"),
            airlight=tuple(d.get("airlight", DEFAULT_AIRLIGHT)),
        )


CLEAN = PerturbationSpec(kind="clean")


def default_attacks() -> list[PerturbationSpec]:
    """The calibrated eight-attack battery used throughout the analysis."""
    specs = [PerturbationSpec(kind="noise", sigma=s) for s in NOISE_SIGMAS]
    specs.append(PerturbationSpec(kind="dark", brightness_factor=DARK_FACTOR))
    specs.append(PerturbationSpec(kind="bright", brightness_factor=BRIGHT_FACTOR))
    specs.append(PerturbationSpec(kind="fog_light", alpha=FOG_LIGHT_ALPHA))
    specs.append(PerturbationSpec(kind="fog_heavy", alpha=FOG_HEAVY_ALPHA))
    return specs
