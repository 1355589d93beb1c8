"""High-precision reference values, frozen, and the fast paths checked against them."""

import math

import numpy as np
import pytest

from egad import oracle
from egad.entropy import (
    CurriculumClock,
    TemperatureBounds,
    adaptive_temperatures,
    curriculum_weights,
    entropy_threshold,
    token_entropy,
)
from egad.errors import OracleError
from egad.losses import kl_divergence, tempered_kl

# Frozen from the mpmath oracle at 50 digits.
ENTROPY_721 = 0.8018185525433373
TEMPERED_KL_20_00_T2 = 0.11094407167172736
TEMPERED_KL_SWEEP = {2: 0.11094407167172736, 4: 0.03029986198076591,
                     8: 0.007751885902551273, 16: 0.0019493169144957753}
KL_HALF_VS_91 = 0.5108256237659906
SIGMOID_1 = 0.7310585786300049
SIGMOID_2 = 0.8807970779778824
TEMP_H1 = 3.9242343145200196
TEMP_LN1000 = 4.996003996003996    # 1 + 4 * 1000/1001
ADAMW_ONE_STEP = 0.99999495000005


def test_reference_values_match_frozen():
    assert oracle.reference_entropy_kl([0.7, 0.2, 0.1], [0.7, 0.2, 0.1])[0] == ENTROPY_721
    assert oracle.reference_entropy_kl([2, 0], [0, 0], 2.0)[1] == TEMPERED_KL_20_00_T2
    for t, v in TEMPERED_KL_SWEEP.items():
        assert oracle.reference_entropy_kl([2, 0], [0, 0], float(t))[1] == v
    assert oracle.reference_entropy_kl([0.5, 0.5], [0.9, 0.1])[1] == KL_HALF_VS_91
    assert oracle.reference_sigmoid(1.0) == SIGMOID_1
    assert oracle.reference_sigmoid(2.0) == SIGMOID_2
    assert oracle.reference_temperature(1.0, 1.0, 5.0) == TEMP_H1
    assert oracle.reference_temperature(math.log(1000), 1.0, 5.0) == TEMP_LN1000
    assert oracle.reference_adamw(1.0, [1.0], 5e-6, 1e-2) == [1.0, ADAMW_ONE_STEP]


def test_six_digit_values():
    assert round(ENTROPY_721, 6) == 0.801819
    assert round(TEMPERED_KL_20_00_T2, 6) == 0.110944   # 0.731059*ln(1.462117) + 0.268941*ln(0.537883)
    assert round(KL_HALF_VS_91, 6) == 0.510826
    assert round(SIGMOID_2, 6) == 0.880797
    assert round(TEMP_H1, 6) == 3.924234
    assert round(ADAMW_ONE_STEP, 8) == 0.99999495


def test_fast_entropy_within_1e12():
    for row in ([0.7, 0.2, 0.1], [0.5, 0.5], [1, 0, 0, 0], [0.25] * 4):
        ref = oracle.reference_entropy_kl(row, row)[0]
        assert abs(token_entropy(np.array(row)) - ref) <= 1e-12


def test_fast_kl_within_1e12():
    assert abs(kl_divergence([0.5, 0.5], [0.9, 0.1]) - KL_HALF_VS_91) <= 1e-12
    assert abs(kl_divergence([1.0, 0.0], [0.5, 0.5]) - math.log(2)) <= 1e-12
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_fast_tempered_kl_within_1e12():
    for t, ref in TEMPERED_KL_SWEEP.items():
        assert abs(tempered_kl([2.0, 0.0], [0.0, 0.0], float(t)).item() - ref) <= 1e-12
    vals = list(TEMPERED_KL_SWEEP.values())
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_fast_weights_and_temperatures_within_1e12():
    h = np.array([0.0, 1.0, 2.0, math.log(1000)])
    early = curriculum_weights(h, CurriculumClock(0, 10))
    late = curriculum_weights(h, CurriculumClock(10, 10))
    temps = adaptive_temperatures(h, TemperatureBounds(1.0, 5.0))
    for i, x in enumerate(h):
        assert abs(early[i] - oracle.reference_curriculum_weight(x, True)) <= 1e-12
        assert abs(late[i] - oracle.reference_curriculum_weight(x, False)) <= 1e-12
        assert abs(temps[i] - oracle.reference_temperature(x, 1.0, 5.0)) <= 1e-12


def test_quantile_rule_exact():
    assert oracle.reference_quantile([0.3, 0.1, 0.2], 1 / 3) == 0.2
    assert entropy_threshold(np.array([0.3, 0.1, 0.2]), 1 / 3) == 0.2
    rng = np.random.default_rng(0)
    for n in range(1, 60):
        x = rng.random(n)
        assert entropy_threshold(x, 1 / 3) == oracle.reference_quantile(list(x), 1 / 3)
    assert oracle.reference_quantile([4.0], 0.9) == 4.0
    assert oracle.reference_quantile([3.0, 1.0, 2.0], 0.0) == 1.0


def test_quantile_rank_uses_exact_thirds():
    # 1/3 * 3 is 1 in exact arithmetic; the float product must not round down
    assert oracle.quantile_rank(1 / 3, 3) == 1
    assert oracle.quantile_rank(1 / 3, 300) == 100


def test_uniform_entropy_is_log_v():
    for v in (2, 7, 1000):
        h = oracle.reference_entropy_kl([1 / v] * v, [1 / v] * v)[0]
        assert abs(h - math.log(v)) <= 1e-14


def test_reference_matmul():
    assert oracle.reference_matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]]) == [[19, 22], [43, 50]]
    with pytest.raises(OracleError):
        oracle.reference_matmul([[1, 2]], [[1, 2]])


def test_reference_softmax_row():
    p = oracle.reference_softmax([2, 0], 2.0)
    assert p == [SIGMOID_1, 1 - SIGMOID_1]


def test_finite_difference_polynomial_and_linear():
    g = oracle.finite_difference_grad(lambda x: float(x[0] ** 2), np.array([3.0]))
    assert abs(g[0] - 6.0) <= 1e-9
    g = oracle.finite_difference_grad(lambda x: float(x.sum()), np.array([0.5, -2.0, 7.0]), h=0.25)
    assert np.array_equal(g, np.ones(3))


def test_oracle_rejects_bad_input():
    with pytest.raises(OracleError):
        oracle.reference_entropy_kl([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(OracleError):
        oracle.reference_entropy_kl([1, 0], [0.5, 0.5, 0.0])
    with pytest.raises(OracleError):
        oracle.reference_entropy_kl([1, 0], [0, 1], temperature=0.0)
    with pytest.raises(OracleError):
        oracle.reference_quantile([], 0.5)


def test_adamw_trajectory_edge_cases():
    assert oracle.reference_adamw(2.0, [0.0] * 5, 1e-3, 0.0) == [2.0] * 6
    traj = oracle.reference_adamw(2.0, [0.0] * 3, 1e-3, 0.1)
    for a, b in zip(traj, traj[1:]):
        assert b == a - 1e-3 * 0.1 * a
