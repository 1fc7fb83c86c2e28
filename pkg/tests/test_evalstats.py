import numpy as np
import pytest

from girl.evalstats import (ScoreMatrix, iqm, normalize, optimality_gap,
                            prob_improvement, stratified_bootstrap_ci)


def brute_iqm(scores):
    """Independent trimmed-mean oracle with fractional endpoint weights."""
    xs = np.sort(np.asarray(scores, dtype=float))
    n = len(xs)
    total, wsum = 0.0, 0.0
    for i, x in enumerate(xs):
        w = min(i + 1, 3 * n / 4) - max(i, n / 4)
        w = min(max(w, 0.0), 1.0)
        total += w * x
        wsum += w
    return total / wsum


def test_normalize_cases():
    assert normalize(5.0, 5.0, 10.0) == 0.0
    assert normalize(10.0, 5.0, 10.0) == 1.0
    assert normalize(7.5, 5.0, 10.0) == 0.5
    with pytest.raises(ValueError):
        normalize(1.0, 3.0, 3.0)


def test_iqm_constant():
    assert iqm([2.5] * 7) == pytest.approx(2.5)


def test_iqm_spec_examples():
    xs = [0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0]
    assert iqm(xs) == pytest.approx(0.35)
    assert iqm([0, 1, 2, 100]) == pytest.approx(1.5)


def test_iqm_matches_brute_force_random(rng):
    for n in (3, 4, 5, 6, 7, 8, 10, 13, 100):
        xs = rng.normal(size=n)
        assert iqm(xs) == pytest.approx(brute_iqm(xs), abs=1e-12)


def test_iqm_monotone_and_permutation_invariant(rng):
    xs = rng.normal(size=9)
    base = iqm(xs)
    bumped = xs.copy()
    bumped[3] += 0.5
    assert iqm(bumped) >= base
    assert iqm(rng.permutation(xs)) == pytest.approx(base)


def test_iqm_empty_errors():
    with pytest.raises(ValueError):
        iqm([])


def test_prob_improvement_cases():
    xs = [1.0, 2.0, 3.0]
    assert prob_improvement(xs, xs) == 0.5
    assert prob_improvement([5, 6], [1, 2]) == 1.0
    assert prob_improvement([1, 3], [2]) == 0.5
    with pytest.raises(ValueError):
        prob_improvement([], [1])


def test_prob_improvement_complement(rng):
    for _ in range(1000):
        xs = rng.integers(0, 5, size=rng.integers(1, 6)).astype(float)
        ys = rng.integers(0, 5, size=rng.integers(1, 6)).astype(float)
        assert prob_improvement(xs, ys) + prob_improvement(ys, xs) \
            == pytest.approx(1.0, abs=1e-15)


def test_optimality_gap():
    assert optimality_gap(1.0) == 0.0
    assert optimality_gap(0.0) == 1.0
    assert optimality_gap(0.81) == pytest.approx(0.19)


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        ScoreMatrix({})
    with pytest.raises(ValueError):
        ScoreMatrix({"a": []})
    with pytest.raises(ValueError):
        ScoreMatrix({"a": [np.nan]})


def test_bootstrap_degenerate_point_interval():
    sm = ScoreMatrix({"t1": [0.4] * 6, "t2": [0.4] * 3})
    lo, hi, point = stratified_bootstrap_ci(sm, "iqm", n_resamples=200, seed=0)
    assert lo == hi == point == pytest.approx(0.4)


def test_bootstrap_point_inside_interval(rng):
    sm = ScoreMatrix({"t1": rng.normal(size=20), "t2": rng.normal(size=15)})
    lo, hi, point = stratified_bootstrap_ci(sm, "iqm", n_resamples=500, seed=1)
    assert lo <= point <= hi


def test_bootstrap_deterministic_bit_exact(rng):
    sm = ScoreMatrix({"t": rng.normal(size=12)})
    a = stratified_bootstrap_ci(sm, "iqm", n_resamples=300, seed=5)
    b = stratified_bootstrap_ci(sm, "iqm", n_resamples=300, seed=5)
    assert a == b


def test_bootstrap_self_consistency_width():
    rng = np.random.default_rng(9)
    sm = ScoreMatrix({"t": rng.normal(0.5, 0.2, size=200)})
    lo1, hi1, _ = stratified_bootstrap_ci(sm, "iqm", n_resamples=4000, seed=0)
    lo2, hi2, _ = stratified_bootstrap_ci(sm, "iqm", n_resamples=4000, seed=99)
    w1, w2 = hi1 - lo1, hi2 - lo2
    assert abs(w1 - w2) / w1 < 0.10


def test_bootstrap_pi_statistic(rng):
    a = ScoreMatrix({"t": rng.normal(1.0, 0.1, size=15)})
    b = ScoreMatrix({"t": rng.normal(0.0, 0.1, size=15)})
    lo, hi, point = stratified_bootstrap_ci(a, "pi", n_resamples=300, seed=0,
                                            other=b)
    assert point == 1.0 and lo == 1.0 and hi == 1.0
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(a, "pi", n_resamples=10, seed=0)


def test_bootstrap_validation():
    sm = ScoreMatrix({"t": [1.0, 2.0]})
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(sm, "iqm", n_resamples=0)
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(sm, "iqm", n_resamples=10, level=1.5)
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(sm, "median", n_resamples=10)
