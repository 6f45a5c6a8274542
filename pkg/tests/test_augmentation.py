import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrsketch.augmentation import AugmentConfig, augment, compose_training_set, random_anisotropic_scale, \
    random_axis_rotation
from vrsketch.geometry import is_normalized, normalize_cloud


def _pdist(x):
    return np.linalg.norm(x[:, None] - x[None], axis=-1)


def test_zero_rotation_identity(rng):
    x = rng.normal(size=(20, 3))
    np.testing.assert_allclose(random_axis_rotation(x, rng, renormalize=False, degrees=0.0), x, atol=1e-15)


def test_quarter_turn_about_z(rng):
    out = random_axis_rotation([[1.0, 0.0, 0.0]], rng, "z", renormalize=False, degrees=90)
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from("xyz"))
def test_rotation_preserves_distances(seed, axis):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 3))
    out = random_axis_rotation(x, rng, axis, renormalize=False)
    np.testing.assert_allclose(_pdist(out), _pdist(x), atol=1e-6)
    # renormalized rotation of a normalized cloud is still normalized
    assert is_normalized(random_axis_rotation(normalize_cloud(x), rng, axis))


def test_fixed_scale_factors():
    cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    out = random_anisotropic_scale(cube, None, renormalize=False, factors=(0.9, 1.0, 1.1))
    np.testing.assert_allclose(out.max(0) - out.min(0), [0.9, 1.0, 1.1])


def test_scale_factors_bounded():
    cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    for seed in range(1000):
        extent = np.ptp(random_anisotropic_scale(cube, np.random.default_rng(seed), renormalize=False), axis=0)
        assert np.all((extent >= 0.9) & (extent <= 1.1))


def test_augment_disabled_is_identity(rng):
    x = normalize_cloud(rng.normal(size=(10, 3)))
    assert augment(x, AugmentConfig(), rng) is x


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(scale_range=(1.1, 0.9))
    with pytest.raises(ValueError):
        AugmentConfig(rotation_axis="w")


class TestCompose:
    def test_ratio_one_and_half(self):
        human = [f"h{i}" for i in range(281)]
        synthetic = [f"s{i}" for i in range(1000)]
        out = compose_training_set(human, synthetic, 1.5, seed=0)
        assert len(out) == 281 + 421
        assert out[:281] == human
        assert len(set(out)) == len(out)

    def test_cap_at_available(self):
        out = compose_training_set(["h"] * 10, ["s1", "s2"], 1.0)
        assert out == ["h"] * 10 + ["s1", "s2"]

    def test_ratio_zero(self):
        assert compose_training_set(["h1"], ["s1"], 0.0) == ["h1"]

    def test_explicit_count(self):
        out = compose_training_set(["h"] * 3, [f"s{i}" for i in range(800)], count=702)
        assert len(out) == 705

    def test_seeded(self):
        syn = list(range(100))
        assert compose_training_set([], syn, count=10, seed=1) == compose_training_set([], syn, count=10, seed=1)
        assert compose_training_set([], syn, count=10, seed=1) != compose_training_set([], syn, count=10, seed=2)

    def test_warns_above_two(self, caplog):
        with caplog.at_level(logging.WARNING):
            compose_training_set(["h"], ["s"] * 5, 2.5)
        assert "exceeds" in caplog.text

    @pytest.mark.parametrize("fraction,count", [(0.2, 140), (0.4, 280), (0.6, 421), (0.8, 561), (1.0, 702)])
    def test_table_counts_are_fractions_of_702(self, fraction, count):
        # the synthetic counts of the mixed-training rows
        assert int(np.floor(fraction * 702 + 1e-9)) == count
