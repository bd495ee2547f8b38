"""Clip manifest reading and writing.

A manifest is a single JSON document:

    {"clips": [{"id": ..., "frames": [...], "ego_history": [{t,x,y,vx,vy}...],
                "gt_trajectory": [[x, y] * 64], "clean_coc": ..., "category": ...}]}

Frame paths are stored relative to the manifest's directory.
"""
from __future__ import annotations

import json
from pathlib import Path

from .types import Clip, EgoState, Trajectory, ValidationError


class ManifestError(ValueError):
    """A manifest file is missing, malformed, or fails validation."""


def _clip_from_dict(d: dict, base: Path, check_frames: bool) -> Clip:
    clip_id = d.get("id")
    if not clip_id or not isinstance(clip_id, str):
        raise ManifestError(f"clip entry missing string 'id': {d!r:.120}")

    def fail(field: str, why: str) -> ManifestError:
        return ManifestError(f"clip {clip_id!r}: field {field!r} {why}")

    frames = d.get("frames")
    if not isinstance(frames, list) or not frames or not all(isinstance(f, str) for f in frames):
        raise fail("frames", "must be a non-empty list of paths")
    if check_frames:
        for f in frames:
            if not (base / f).is_file():
                raise fail("frames", f"references missing file {f!r}")
    try:
        ego = tuple(EgoState.from_dict(s) for s in d.get("ego_history", []))
    except (ValidationError, TypeError) as exc:
        raise fail("ego_history", f"is invalid: {exc}") from exc
    gt = d.get("gt_trajectory")
    if not isinstance(gt, list):
        raise fail("gt_trajectory", "must be a list of [x, y] pairs")
    try:
        traj = Trajectory.from_list(gt)
    except (ValidationError, ValueError) as exc:
        raise fail("gt_trajectory", f"is invalid: {exc}") from exc
    coc = d.get("clean_coc")
    if not isinstance(coc, str) or not coc.strip():
        raise fail("clean_coc", "must be a non-empty string")
    category = d.get("category")
    if category is not None and not isinstance(category, str):
        raise fail("category", "must be a string when present")
    try:
        return Clip(
            clip_id=clip_id, frames=tuple(frames), ego_history=ego,
            gt_trajectory=traj, clean_coc=coc, category=category,
        )
    except ValidationError as exc:
        raise ManifestError(str(exc)) from exc


def load_manifest(path: str | Path, check_frames: bool = True) -> list[Clip]:
    """Load and validate a clip manifest.

    Raises ManifestError naming the offending clip and field on any problem.
    Duplicate clip ids are rejected. With check_frames, every frame path must
    resolve to a file relative to the manifest directory.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("clips"), list):
        raise ManifestError(f"manifest {path} must be an object with a 'clips' list")
    clips = [_clip_from_dict(entry, path.parent, check_frames) for entry in doc["clips"]]
    seen: set[str] = set()
    for c in clips:
        if c.clip_id in seen:
            raise ManifestError(f"duplicate clip id {c.clip_id!r}")
        seen.add(c.clip_id)
    return clips


def write_manifest(clips: list[Clip], path: str | Path) -> None:
    """Write clips to a manifest JSON file (frame paths kept as given)."""
    doc = {
        "clips": [
            {
                "id": c.clip_id,
                "frames": list(c.frames),
                "ego_history": [s.to_dict() for s in c.ego_history],
                "gt_trajectory": c.gt_trajectory.to_list(),
                "clean_coc": c.clean_coc,
                "category": c.category,
            }
            for c in clips
        ]
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")
