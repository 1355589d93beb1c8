import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egad.entropy import (
    CurriculumClock,
    TemperatureBounds,
    adaptive_temperatures,
    curriculum_weights,
    deep_path_mask,
    entropy_from_logits,
    entropy_profile,
    entropy_threshold,
    ranked_deep_mask,
    sigmoid,
    token_entropy,
)
from egad.errors import ConfigError, InputError

entropies = arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 10))


def test_entropy_examples():
    assert abs(token_entropy([0.5, 0.5])[0] - math.log(2)) <= 1e-15
    assert token_entropy([1, 0, 0, 0])[0] == 0.0
    assert round(token_entropy([0.7, 0.2, 0.1])[0], 6) == 0.801819


def test_entropy_rejects_unnormalised_rows():
    with pytest.raises(InputError):
        token_entropy([0.5, 0.6])
    with pytest.raises(InputError):
        token_entropy([1.2, -0.2])


@given(arrays(np.float64, (3, 6), elements=st.floats(-30, 30)))
def test_entropy_bounds(z):
    h = entropy_from_logits(z)
    assert np.all(h >= 0)
    assert np.all(h <= math.log(6) + 1e-12)


@given(arrays(np.float64, (2, 5), elements=st.floats(-10, 10)))
def test_entropy_from_logits_matches_probability_path(z):
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    assert np.allclose(entropy_from_logits(z), token_entropy(p), rtol=0, atol=1e-12)


def test_curriculum_weight_examples():
    early, late = CurriculumClock(0, 5), CurriculumClock(5, 5)
    assert curriculum_weights([1.0], early)[0] == 0.5
    assert round(curriculum_weights([0.0], early)[0], 6) == 0.731059
    assert round(curriculum_weights([2.0], late)[0], 6) == 0.880797
    assert early.phase == "early" and late.phase == "late"


@given(entropies)
def test_weights_in_unit_interval_and_monotone(h):
    hs = np.sort(h)
    early = curriculum_weights(hs, CurriculumClock(0, 1))
    late = curriculum_weights(hs, CurriculumClock(1, 1))
    assert np.all((early > 0) & (early < 1)) and np.all((late > 0) & (late < 1))
    assert np.all(np.diff(early) <= 0) and np.all(np.diff(late) >= 0)


def test_temperature_examples():
    b = TemperatureBounds(1.0, 5.0)
    assert adaptive_temperatures([0.0], b)[0] == 3.0
    assert round(adaptive_temperatures([1.0], b)[0], 6) == 3.924234
    assert round(adaptive_temperatures([math.log(1000)], b)[0], 6) == 4.996004


@given(entropies, st.floats(0.1, 3), st.floats(0, 5))
def test_temperatures_within_bounds(h, t_min, width):
    b = TemperatureBounds(t_min, t_min + width)
    t = adaptive_temperatures(h, b)
    assert np.all(t >= b.t_min) and np.all(t <= b.t_max)


def test_temperature_bounds_validation():
    with pytest.raises(ConfigError):
        TemperatureBounds(5.0, 1.0)
    with pytest.raises(ConfigError):
        TemperatureBounds(0.0, 1.0)
    with pytest.raises(ConfigError):
        CurriculumClock(0, 0)


def test_threshold_examples():
    assert entropy_threshold([0.1, 0.2, 0.3], 1 / 3) == 0.2
    assert entropy_threshold([0.5] * 4, 1 / 3) == 0.5
    assert deep_path_mask([0.5] * 4, 0.5).all()
    assert entropy_threshold([0.4, 0.1, 0.9], 0.0) == 0.1


def test_mask_examples():
    assert deep_path_mask([0.1, 0.2, 0.3], 0.2).tolist() == [False, True, True]
    assert not deep_path_mask([0.1, 0.2], math.inf).any()
    assert deep_path_mask([0.0, 0.2], 0.0).all()


@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 10), unique=True))
def test_deep_fraction_with_distinct_entropies(h):
    n = h.size
    mask = deep_path_mask(h, entropy_threshold(h, 1 / 3))
    assert mask.sum() == n - math.floor(n / 3)


def test_threshold_rejects_bad_input():
    with pytest.raises(InputError):
        entropy_threshold([], 0.3)
    with pytest.raises(ConfigError):
        entropy_threshold([1.0], 1.0)


def test_negative_entropy_rejected():
    with pytest.raises(InputError):
        curriculum_weights([-0.1], CurriculumClock(0, 1))


def test_profile_bundles_everything():
    h = np.array([0.1, 0.9, 0.5])
    prof = entropy_profile(h, CurriculumClock(3, 2), TemperatureBounds())
    assert prof.threshold == 0.5
    assert prof.deep_mask.tolist() == [False, True, True]
    assert np.array_equal(prof.weights, sigmoid(h))


@given(st.floats(-800, 800))
def test_sigmoid_stable(x):
    s = sigmoid(np.array([x]))[0]
    assert 0 <= s <= 1 and math.isfinite(s)


def test_ranked_mask_breaks_ties_by_position():
    assert ranked_deep_mask([0.5] * 4, 1 / 3).tolist() == [False, True, True, True]
    assert ranked_deep_mask([0.3, 0.1, 0.1, 0.2, 0.1, 0.9], 1 / 3).tolist() == [True, False, False, True, True, True]
    assert ranked_deep_mask([0.2, 0.1], 0.0).all()


@given(arrays(np.float64, st.integers(1, 60), elements=st.sampled_from([0.0, 0.1, 0.5, 1.0, 2.0])),
       st.sampled_from([0.0, 0.25, 1 / 3, 0.5]))
def test_ranked_mask_count_and_consistency_with_threshold(h, q):
    n = h.size
    mask = ranked_deep_mask(h, q)
    k = math.floor(q * n + 1e-9)
    assert mask.sum() == n - min(k, n - 1)
    th = entropy_threshold(h, q)
    assert np.all(h[mask] >= th) and np.all(h[~mask] <= th)
