"""Synthetic fixture clips: procedural road scenes, trajectories, CoC templates.

Substitutes for the real dataset at desk scale. Every clip cycles through the
eight scenario categories; the CoC templates are written so classify_scenario
recovers the intended category from the clean text. Ground-truth trajectories
deliberately depart from constant velocity (deceleration, arcs, lane shifts)
so the constant-velocity baseline is measurably worse than a model that
tracks ground truth. Everything is a pure function of (n, seed).
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .images import save_image
from .manifest import write_manifest
from .perturb import SeedDerivation
from .types import TRAJECTORY_DT, TRAJECTORY_LEN, Clip, EgoState, Trajectory

DEFAULT_VIEWS = 2
DEFAULT_WIDTH = 160
DEFAULT_HEIGHT = 120

# (category, clean CoC, motion profile)
FIXTURE_SCHEDULE = (
    ("Follow_Vehicle", "Keep distance to the lead vehicle because it is directly ahead.", "decelerate"),
    ("Intersection_Navigation", "Proceed through the intersection because it is clear.", "accelerate"),
    ("Stop_Signal", "Stop because the traffic light is red.", "stop"),
    ("Lane_Keeping", "Keep lane and maintain speed because the road ahead is clear.", "decelerate"),
    ("Passing", "Pass the slow truck on the left because the adjacent lane is open.", "lane_shift"),
    ("Turn_Left", "Turn left ahead because the planned route requires it.", "arc_left"),
    ("Turn_Right", "Turn right ahead because the destination street is close.", "arc_right"),
    ("Other", "Hold position and wait because the situation ahead is unclear.", "decelerate"),
)


def _disk(img: np.ndarray, cy: int, cx: int, r: int, color: tuple[int, int, int]) -> None:
    h, w = img.shape[:2]
    yy, xx = np.ogrid[:h, :w]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[mask] = color


def _rect(img: np.ndarray, y0: int, y1: int, x0: int, x1: int, color: tuple[int, int, int]) -> None:
    h, w = img.shape[:2]
    img[max(0, y0) : min(h, y1), max(0, x0) : min(w, x1)] = color


def _draw_scene(
    rng: np.random.Generator, category: str, width: int, height: int, view: int
) -> np.ndarray:
    img = np.zeros((height, width, 3), dtype=np.uint8)
    horizon = int(height * (0.38 + 0.08 * rng.random()))

    sky_top = rng.integers(110, 180, size=3)
    sky_bottom = sky_top + rng.integers(20, 60, size=3)
    for y in range(horizon):
        t = y / max(1, horizon - 1)
        img[y] = np.clip(sky_top * (1 - t) + sky_bottom * t, 0, 255).astype(np.uint8)

    sun_x = int(width * (0.15 + 0.7 * rng.random()))
    sun_y = int(horizon * (0.2 + 0.5 * rng.random()))
    _disk(img, sun_y, sun_x, int(4 + 4 * rng.random()), (250, 245, 215))

    ground = tuple(int(v) for v in rng.integers(70, 110, size=3))
    img[horizon:] = ground

    # Road trapezoid; turns bend the centerline toward the horizon.
    drift = -0.22 if category == "Turn_Left" else 0.22 if category == "Turn_Right" else 0.0
    road_color = tuple(int(v) for v in rng.integers(45, 65, size=3))
    center_bottom = width / 2 + (view - (DEFAULT_VIEWS - 1) / 2) * width * 0.05
    for y in range(horizon, height):
        t = (y - horizon) / max(1, height - 1 - horizon)
        half = 2 + t * width * 0.42
        center = center_bottom + (1 - t) * drift * width
        x0, x1 = int(center - half), int(center + half)
        img[y, max(0, x0) : min(width, x1)] = road_color

    # Dashed centerline.
    dash = (235, 235, 220)
    for y in range(horizon + 4, height, 8):
        t = (y - horizon) / max(1, height - 1 - horizon)
        center = int(center_bottom + (1 - t) * drift * width)
        img[y : min(height, y + 4), max(0, center - 1) : min(width, center + 1)] = dash

    mid_y = (horizon + height) // 2
    cx = width // 2
    if category == "Follow_Vehicle":
        _rect(img, mid_y - 14, mid_y, cx - 9, cx + 9, (150, 40, 40))
        _rect(img, mid_y - 11, mid_y - 6, cx - 6, cx + 6, (30, 30, 45))
    elif category == "Stop_Signal":
        _rect(img, horizon - 26, mid_y - 8, cx + 30, cx + 33, (60, 60, 60))
        _disk(img, horizon - 20, cx + 31, 5, (210, 40, 40))
    elif category == "Intersection_Navigation":
        img[horizon + 6 : horizon + 14, :] = road_color
    elif category == "Passing":
        _rect(img, mid_y - 18, mid_y, cx + 12, cx + 30, (90, 90, 120))
        _rect(img, mid_y - 15, mid_y - 9, cx + 15, cx + 27, (35, 35, 50))
    elif category == "Other":
        _disk(img, mid_y - 4, cx - 20, 7, (190, 140, 60))

    return img


def _motion_profile(kind: str, v: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(1, TRAJECTORY_LEN + 1, dtype=np.float64) * TRAJECTORY_DT
    if kind == "decelerate":
        a = 0.4 + 0.5 * rng.random()
        s = np.maximum(v * t - 0.5 * a * t**2, 0.0)
        s = np.maximum.accumulate(s)
        return np.column_stack([s, np.zeros_like(t)])
    if kind == "accelerate":
        a = 0.4 + 0.4 * rng.random()
        return np.column_stack([v * t + 0.5 * a * t**2, np.zeros_like(t)])
    if kind == "stop":
        a = v / (TRAJECTORY_LEN * TRAJECTORY_DT)
        s = v * t - 0.5 * a * t**2
        return np.column_stack([np.maximum.accumulate(s), np.zeros_like(t)])
    if kind == "lane_shift":
        shift = 3.5
        mid = 3.2
        rate = 1.5 + rng.random()
        y = shift / (1.0 + np.exp(-rate * (t - mid)))
        return np.column_stack([v * t, y])
    if kind in ("arc_left", "arc_right"):
        omega = (0.10 + 0.12 * rng.random()) * (1.0 if kind == "arc_left" else -1.0)
        radius = v / abs(omega)
        x = radius * np.sin(abs(omega) * t)
        y = np.sign(omega) * radius * (1.0 - np.cos(abs(omega) * t))
        return np.column_stack([x, y])
    raise ValueError(f"unknown motion profile {kind!r}")


def generate_fixture_clips(
    out_dir: str | Path,
    n: int,
    seed: int = 42,
    views: int = DEFAULT_VIEWS,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> Path:
    """Write n synthetic clips (frames + manifest) under out_dir.

    Returns the manifest path. n=0 writes an empty manifest. The same
    (n, seed, views, size) always produces a byte-identical tree.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if views < 1:
        raise ValueError(f"views must be >= 1, got {views}")
    out_dir = Path(out_dir)
    clips: list[Clip] = []
    for i in range(n):
        clip_id = f"clip_{i:04d}"
        category, coc, profile = FIXTURE_SCHEDULE[i % len(FIXTURE_SCHEDULE)]
        frame_paths: list[str] = []
        for view in range(views):
            rng = SeedDerivation(seed, clip_id, view, "fixture").generator()
            frame = _draw_scene(rng, category, width, height, view)
            rel = f"frames/{clip_id}_view{view}.png"
            save_image(frame, out_dir / rel)
            frame_paths.append(rel)
        traj_rng = SeedDerivation(seed, clip_id, 0, "trajectory").generator()
        v = 6.0 + 8.0 * traj_rng.random()
        waypoints = _motion_profile(profile, v, traj_rng)
        history = tuple(
            EgoState(t=round(-0.4 + 0.1 * j, 1), x=v * (-0.4 + 0.1 * j), y=0.0, vx=v, vy=0.0)
            for j in range(5)
        )
        clips.append(
            Clip(
                clip_id=clip_id,
                frames=tuple(frame_paths),
                ego_history=history,
                gt_trajectory=Trajectory(waypoints),
                clean_coc=coc,
                category=None,
            )
        )
    manifest_path = out_dir / "manifest.json"
    write_manifest(clips, manifest_path)
    return manifest_path
