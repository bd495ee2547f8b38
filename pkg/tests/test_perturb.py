from __future__ import annotations

import numpy as np
import pytest

from drivestress.perturb import (
    SeedDerivation,
    apply_perturbation,
    fog_blend,
    gaussian_noise,
    perturbation_energy,
    photometric_scale,
    quantize,
)
from drivestress.types import PerturbationSpec

from conftest import random_image


def derivation(kind="noise_30", seed=42, clip="clip_0001", frame=0):
    return SeedDerivation(seed, clip, frame, kind)


class TestQuantize:
    def test_rounds_half_away_from_zero(self):
        vals = np.array([[0.5, 1.5, 2.4], [254.5, 255.7, -0.6]])
        out = quantize(vals[..., None].repeat(3, axis=-1))
        expected = np.array([[1, 2, 2], [255, 255, 0]], dtype=np.uint8)
        assert np.array_equal(out[:, :, 0], expected)

    def test_clamps_to_uint8_range(self):
        vals = np.full((2, 2, 3), 300.0)
        assert np.all(quantize(vals) == 255)
        vals = np.full((2, 2, 3), -40.0)
        assert np.all(quantize(vals) == 0)

    def test_brute_force_oracle(self, rng):
        vals = rng.uniform(-20, 275, size=(8, 9, 3))
        out = quantize(vals)
        flat_in = vals.ravel()
        flat_out = out.ravel()
        for x, got in zip(flat_in, flat_out):
            r = np.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)
            assert got == min(255, max(0, int(r)))


class TestDeterminism:
    def test_same_key_same_bytes(self, rng):
        img = random_image(rng)
        spec = PerturbationSpec(kind="noise", sigma=30)
        a = apply_perturbation(img, spec, derivation())
        b = apply_perturbation(img, spec, derivation())
        assert np.array_equal(a, b)

    def test_distinct_sigmas_use_distinct_streams(self, rng):
        img = random_image(rng)
        a = apply_perturbation(img, PerturbationSpec(kind="noise", sigma=30), derivation("noise_30"))
        b = apply_perturbation(img, PerturbationSpec(kind="noise", sigma=50), derivation("noise_50"))
        # not just a scaled copy of the same draw: normalized residuals differ
        res_a = a.astype(np.int16) - img.astype(np.int16)
        res_b = b.astype(np.int16) - img.astype(np.int16)
        assert not np.array_equal(np.sign(res_a), np.sign(res_b))

    def test_frame_index_changes_stream(self, rng):
        img = random_image(rng)
        spec = PerturbationSpec(kind="noise", sigma=30)
        a = apply_perturbation(img, spec, derivation(frame=0))
        b = apply_perturbation(img, spec, derivation(frame=1))
        assert not np.array_equal(a, b)

    def test_clip_id_changes_stream(self, rng):
        img = random_image(rng)
        spec = PerturbationSpec(kind="noise", sigma=30)
        a = apply_perturbation(img, spec, derivation(clip="clip_0001"))
        b = apply_perturbation(img, spec, derivation(clip="clip_0002"))
        assert not np.array_equal(a, b)


class TestGaussianNoise:
    def test_sigma_zero_is_identity(self, rng):
        img = random_image(rng)
        out = gaussian_noise(img, 0.0, derivation())
        assert np.array_equal(out, img)
        assert out is not img

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(ValueError):
            gaussian_noise(random_image(rng), -1.0, derivation())

    def test_noise_statistics(self, rng):
        img = np.full((64, 64, 3), 128, dtype=np.uint8)
        out = gaussian_noise(img, 30.0, derivation())
        residual = out.astype(np.float64) - 128.0
        assert abs(residual.mean()) < 1.5
        assert abs(residual.std() - 30.0) < 1.5


class TestPhotometric:
    def test_known_pixels(self):
        img = np.full((2, 2, 3), 100, dtype=np.uint8)
        assert np.all(photometric_scale(img, 0.4) == 40)
        assert np.all(photometric_scale(img, 1.6) == 160)

    def test_rounding_half_away(self):
        img = np.full((1, 1, 3), 101, dtype=np.uint8)
        # 101 * 0.5 = 50.5 rounds away from zero to 51
        assert np.all(photometric_scale(img, 0.5) == 51)

    def test_saturation(self):
        img = np.full((2, 2, 3), 200, dtype=np.uint8)
        assert np.all(photometric_scale(img, 1.6) == 255)

    def test_factor_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            photometric_scale(random_image(rng), 0.0)


class TestFog:
    def test_alpha_zero_is_identity(self, rng):
        img = random_image(rng)
        assert np.array_equal(fog_blend(img, 0.0), img)

    def test_alpha_one_is_airlight(self, rng):
        img = random_image(rng)
        out = fog_blend(img, 1.0)
        assert np.all(out == 240)

    def test_blend_oracle(self, rng):
        img = random_image(rng)
        out = fog_blend(img, 0.3)
        expected = quantize(0.7 * img.astype(np.float64) + 0.3 * 240.0)
        assert np.array_equal(out, expected)

    def test_vertical_gradient_denser_at_top(self):
        img = np.zeros((100, 10, 3), dtype=np.uint8)
        out = fog_blend(img, 0.5, vertical_gradient=True)
        assert out[0].mean() > out[-1].mean()

    def test_alpha_out_of_range(self, rng):
        with pytest.raises(ValueError):
            fog_blend(random_image(rng), 1.2)


class TestApplyDispatch:
    def test_clean_returns_copy(self, rng):
        img = random_image(rng)
        out = apply_perturbation(img, PerturbationSpec(kind="clean"), derivation("clean"))
        assert np.array_equal(out, img)
        assert out is not img

    def test_all_default_attacks_apply(self, rng, fixture_manifest, fixture_clips):
        from drivestress.images import load_image
        from drivestress.types import default_attacks

        img = load_image(fixture_manifest.parent / fixture_clips[0].frames[0])
        for spec in default_attacks():
            out = apply_perturbation(img, spec, derivation(spec.label))
            assert out.shape == img.shape
            assert out.dtype == np.uint8
            assert not np.array_equal(out, img)


class TestEnergy:
    def test_identical_images_zero(self, rng):
        img = random_image(rng)
        assert perturbation_energy(img, img) == 0.0

    def test_hand_computed(self):
        a = np.zeros((2, 2, 3), dtype=np.uint8)
        b = a.copy()
        b[0, 0, 0] = 12
        assert perturbation_energy(a, b) == pytest.approx(1.0)

    def test_energy_monotone_in_sigma(self, rng):
        img = random_image(rng, 48, 48)
        energies = []
        for sigma in (10, 30, 50, 70):
            spec = PerturbationSpec(kind="noise", sigma=sigma)
            out = apply_perturbation(img, spec, derivation(spec.label))
            energies.append(perturbation_energy(img, out))
        assert energies == sorted(energies)
