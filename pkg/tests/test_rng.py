import numpy as np
import pytest

from utils.rng import (
    SEED_MODULUS,
    NoiseStream,
    auxiliary_generator,
    noise_block,
    padded_width,
    sample_seed,
)


def test_block_matches_step_by_step_draws():
    stream = NoiseStream(seed=7, width=10)
    block = stream.block(3, 5)
    for i in range(5):
        np.testing.assert_array_equal(block[i], stream.step(3 + i))


def test_any_step_is_reachable_directly():
    long_block = noise_block(11, 6, 1, 100)
    np.testing.assert_array_equal(long_block[57], noise_block(11, 6, 58, 1)[0])


def test_noise_is_box_distributed():
    z = noise_block(1, 8, 1, 20_000)
    assert z.shape == (20_000, 8)
    assert z.min() >= -0.5 and z.max() < 0.5
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1 / 12) < 0.002


def test_different_seeds_give_different_noise():
    assert not np.array_equal(noise_block(1, 4, 1, 3), noise_block(2, 4, 1, 3))


@pytest.mark.parametrize("t0", [0, -3])
def test_steps_are_numbered_from_one(t0):
    with pytest.raises(ValueError):
        noise_block(0, 4, t0, 1)


def test_padded_width_rounds_up_to_counter_words():
    assert padded_width(4) == 4
    assert padded_width(10) == 12
    assert padded_width(1) == 4


def test_sample_seed_wraps():
    assert sample_seed(5, 3) == 8
    assert sample_seed(SEED_MODULUS - 1, 1) == 0


def test_auxiliary_generator_is_deterministic_and_tagged():
    a = auxiliary_generator(3, 1).standard_normal(4)
    b = auxiliary_generator(3, 1).standard_normal(4)
    c = auxiliary_generator(3, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
