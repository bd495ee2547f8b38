from __future__ import annotations

import numpy as np
import pytest

from drivestress.types import (
    CLEAN,
    Clip,
    EgoState,
    PerturbationSpec,
    Trajectory,
    ValidationError,
    default_attacks,
    validate_image,
)


def make_trajectory(offset=0.0):
    pts = np.stack([np.arange(64, dtype=np.float64), np.full(64, offset)], axis=1)
    return Trajectory(waypoints=pts)


class TestTrajectory:
    def test_requires_64_waypoints(self):
        with pytest.raises(ValidationError):
            Trajectory(waypoints=np.zeros((63, 2)))

    def test_requires_two_columns(self):
        with pytest.raises(ValidationError):
            Trajectory(waypoints=np.zeros((64, 3)))

    def test_rejects_non_finite(self):
        pts = np.zeros((64, 2))
        pts[10, 0] = np.nan
        with pytest.raises(ValidationError):
            Trajectory(waypoints=pts)

    def test_waypoints_read_only(self):
        t = make_trajectory()
        with pytest.raises(ValueError):
            t.waypoints[0, 0] = 99.0

    def test_equality_and_hash(self):
        a, b, c = make_trajectory(), make_trajectory(), make_trajectory(1.0)
        assert a == b
        assert hash(a) == hash(b)
        assert a != c

    def test_roundtrip(self):
        t = make_trajectory(2.5)
        assert Trajectory.from_list(t.to_list()) == t

    def test_mutating_source_array_does_not_leak(self):
        pts = np.zeros((64, 2))
        t = Trajectory(waypoints=pts)
        pts[0, 0] = 77.0
        assert t.waypoints[0, 0] == 0.0


class TestEgoState:
    def test_roundtrip(self):
        s = EgoState(t=-0.1, x=1.0, y=2.0, vx=3.0, vy=4.0)
        assert EgoState.from_dict(s.to_dict()) == s

    def test_properties(self):
        s = EgoState(t=0.0, x=1.0, y=2.0, vx=3.0, vy=4.0)
        assert s.position == (1.0, 2.0)
        assert s.velocity == (3.0, 4.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            EgoState(t=0.0, x=float("inf"), y=0.0, vx=0.0, vy=0.0)


class TestClip:
    def test_requires_increasing_timestamps(self):
        states = [EgoState(t=0.0, x=0, y=0, vx=1, vy=0)] * 2
        with pytest.raises(ValidationError):
            Clip(
                clip_id="c",
                frames=("a.png",),
                ego_history=tuple(states),
                gt_trajectory=make_trajectory(),
                clean_coc="Keep lane because the road is clear.",
            )

    def test_requires_frames(self):
        with pytest.raises(ValidationError):
            Clip(
                clip_id="c",
                frames=(),
                ego_history=(EgoState(t=0.0, x=0, y=0, vx=1, vy=0),),
                gt_trajectory=make_trajectory(),
                clean_coc="Keep lane because the road is clear.",
            )


class TestPerturbationSpec:
    def test_labels(self):
        assert CLEAN.label == "clean"
        assert PerturbationSpec(kind="noise", sigma=30).label == "noise_30"
        assert PerturbationSpec(kind="noise", sigma=12.5).label == "noise_12.5"
        assert PerturbationSpec(kind="fog_heavy", alpha=0.7).label == "fog_heavy"
        assert PerturbationSpec(kind="dark", brightness_factor=0.4).label == "dark"

    def test_noise_requires_sigma(self):
        with pytest.raises(ValidationError):
            PerturbationSpec(kind="noise")

    def test_clean_takes_no_params(self):
        with pytest.raises(ValidationError):
            PerturbationSpec(kind="clean", sigma=10)

    def test_fog_alpha_range(self):
        with pytest.raises(ValidationError):
            PerturbationSpec(kind="fog_light", alpha=1.5)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            PerturbationSpec(kind="sandstorm")

    def test_roundtrip(self):
        for spec in default_attacks():
            assert PerturbationSpec.from_dict(spec.to_dict()) == spec

    def test_default_attacks_cover_grid(self):
        labels = [s.label for s in default_attacks()]
        assert labels == [
            "noise_10", "noise_30", "noise_50", "noise_70",
            "dark", "bright", "fog_light", "fog_heavy",
        ]

    def test_default_airlight(self):
        fog = PerturbationSpec(kind="fog_heavy", alpha=0.7)
        assert fog.airlight == (240, 240, 240)


class TestValidateImage:
    def test_accepts_hwc_uint8(self):
        img = np.zeros((4, 5, 3), dtype=np.uint8)
        assert validate_image(img) is img

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValidationError):
            validate_image(np.zeros((4, 5, 3), dtype=np.float32))

    def test_rejects_wrong_channels(self):
        with pytest.raises(ValidationError):
            validate_image(np.zeros((4, 5, 4), dtype=np.uint8))
