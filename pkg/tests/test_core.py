import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privsub.core import (
    LN2,
    ContractViolation,
    Dataset,
    ParameterError,
    PrivacyParams,
    RandomSource,
    amplification_epsilon,
    exp_mech,
    exp_mech_distribution,
    exponential_inverse_cdf,
    laplace_inverse_cdf,
    poisson_subsample,
    rate_for_target,
    sample_exponential,
    sample_laplace,
)

finite_scores = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30)


def test_random_source_replays():
    a, b = RandomSource(5, 2), RandomSource(5, 2)
    assert np.array_equal(a.uniform(10), b.uniform(10))
    assert not np.array_equal(RandomSource(5, 2).uniform(10), RandomSource(5, 3).uniform(10))


def test_child_streams_are_distinct_and_reproducible():
    r = RandomSource(1)
    assert np.array_equal(r.child(4).uniform(5), RandomSource(1).child(4).uniform(5))
    assert not np.array_equal(r.child(4).uniform(5), r.child(5).uniform(5))


def test_exponential_inverse_cdf_matches_quantile():
    # median of Exp(rate) is ln 2 / rate
    assert exponential_inverse_cdf(0.5, 2.0) == pytest.approx(LN2 / 2, abs=1e-15)
    assert exponential_inverse_cdf(0.0, 1.0) == 0.0


def test_exponential_moments():
    x = sample_exponential(2.0, RandomSource(0), size=200_000)
    assert x.min() >= 0
    se = 0.5 / math.sqrt(len(x))
    assert abs(x.mean() - 0.5) < 4 * se


def test_laplace_median_is_zero():
    assert laplace_inverse_cdf(0.5, 1.0) == 0.0


def test_laplace_variance_and_tail():
    b = 1.5
    x = sample_laplace(b, RandomSource(1), size=1_000_000)
    # Var(X^2) for Laplace is 24 b^4 - 4 b^4 = 20 b^4
    se = math.sqrt(20 * b**4 / len(x))
    assert abs(x.var() - 2 * b**2) < 3 * se
    y = sample_laplace(1.0, RandomSource(2), size=200_000)
    tail = np.mean(np.abs(y) > math.log(10))
    assert abs(tail - 0.1) < 4 * math.sqrt(0.09 / len(y))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_samplers_reject_bad_parameters(bad):
    with pytest.raises(ParameterError):
        sample_exponential(bad, RandomSource(0))
    with pytest.raises(ParameterError):
        sample_laplace(bad, RandomSource(0))


def test_exp_mech_hand_tables():
    assert np.allclose(exp_mech_distribution("abc", [0, 0, 0], 1.0), [1 / 3] * 3, atol=1e-15)
    assert np.allclose(exp_mech_distribution([0, 1], [0, 1], LN2), [1 / 3, 2 / 3], atol=1e-15)
    assert np.allclose(exp_mech_distribution(["x"], [7.0], 3.0), [1.0])
    assert np.allclose(exp_mech_distribution(range(4), [5] * 4, 2.0), [0.25] * 4)


def test_exp_mech_is_stable_for_huge_logits():
    p = exp_mech_distribution([0, 1], [1e5, 1e5 - 1], 10.0)
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1 / (1 + math.exp(-10)))


def test_exp_mech_errors():
    with pytest.raises(ContractViolation):
        exp_mech([], [], 1.0, RandomSource(0))
    with pytest.raises(ParameterError):
        exp_mech([0, 1], [0, float("nan")], 1.0, RandomSource(0))
    with pytest.raises(ParameterError):
        exp_mech_distribution([0, 1], [0, 1], 0.0)


@given(finite_scores, st.floats(0.01, 5.0))
def test_exp_mech_distribution_normalized(scores, rate):
    p = exp_mech_distribution(list(range(len(scores))), scores, rate)
    assert abs(p.sum() - 1) < 1e-12
    assert (p >= 0).all()


@given(finite_scores, st.floats(0.01, 5.0), st.floats(-500, 500))
def test_exp_mech_shift_invariant(scores, rate, shift):
    c = list(range(len(scores)))
    p = exp_mech_distribution(c, scores, rate)
    q = exp_mech_distribution(c, np.asarray(scores) + shift, rate)
    assert np.allclose(p, q, atol=1e-12)


def test_exp_mech_large_candidate_set_sums_to_one():
    scores = RandomSource(3).uniform(10_000) * 50
    p = exp_mech_distribution(list(range(10_000)), scores, 1.0)
    assert abs(p.sum() - 1) < 1e-12


def test_exp_mech_empirical_matches_table():
    cands, scores, rate = [0, 1, 2, 3], [0.0, 1.0, 2.5, 1.0], 0.8
    p = exp_mech_distribution(cands, scores, rate)
    rng = RandomSource(11)
    trials = 100_000
    counts = np.bincount([exp_mech(cands, scores, rate, rng) for _ in range(trials)], minlength=4)
    se = np.sqrt(p * (1 - p) / trials)
    assert (np.abs(counts / trials - p) < 4 * se).all()


def test_poisson_subsample_edge_rates():
    d = Dataset(tuple(range(50)))
    assert len(poisson_subsample(d, 0.0, RandomSource(0))) == 0
    with pytest.raises(ParameterError):
        poisson_subsample(d, 1.0, RandomSource(0))


def test_poisson_subsample_near_one_rate():
    d = Dataset(tuple(range(200)))
    trials, p = 300, 0.999
    kept = sum(len(poisson_subsample(d, p, RandomSource(t))) for t in range(trials))
    rate = kept / (trials * len(d))
    assert abs(rate - p) < 3 * math.sqrt(p * (1 - p) / (trials * len(d)))


def test_poisson_subsample_subset_law_chi_square():
    d = Dataset(("a", "b", "c"))
    rng = RandomSource(9)
    trials = 100_000
    counts = {}
    for _ in range(trials):
        key = poisson_subsample(d, 0.5, rng).ids
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 8
    expected = trials / 8
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < 24.32  # 0.999 quantile of chi^2 with 7 dof


@given(st.lists(st.integers(), max_size=20), st.lists(st.integers(), max_size=20), st.integers(0, 1000))
def test_poisson_subsample_ignores_payloads(a, b, seed):
    n = min(len(a), len(b))
    da, db = Dataset(tuple(a[:n])), Dataset(tuple(b[:n]))
    sa = poisson_subsample(da, 0.4, RandomSource(seed))
    sb = poisson_subsample(db, 0.4, RandomSource(seed))
    assert sa.ids == sb.ids
    assert list(sa.ids) == sorted(sa.ids)


def test_amplification_known_values():
    assert amplification_epsilon(0.0, 3.0) == 0.0
    assert amplification_epsilon(0.5, LN2) == pytest.approx(LN2, abs=1e-15)
    with pytest.raises(ParameterError):
        amplification_epsilon(1.0, LN2)


@given(st.floats(1e-6, 5.0))
def test_rate_round_trip(eps):
    assert abs(amplification_epsilon(rate_for_target(eps), LN2) - eps) <= 1e-12 * max(1.0, eps)


def test_rate_for_target_values():
    assert rate_for_target(LN2) == pytest.approx(0.5, abs=1e-15)
    assert rate_for_target(1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert rate_for_target(1e-12) < 1e-11


@given(st.floats(0, 0.99), st.floats(0, 0.99), st.floats(0.01, 5), st.floats(0.01, 5))
def test_amplification_monotone(p1, p2, e1, e2):
    lo_p, hi_p = sorted((p1, p2))
    lo_e, hi_e = sorted((e1, e2))
    assert amplification_epsilon(lo_p, lo_e) <= amplification_epsilon(hi_p, lo_e) + 1e-15
    assert amplification_epsilon(lo_p, lo_e) <= amplification_epsilon(lo_p, hi_e) + 1e-15


def test_privacy_params_validation():
    PrivacyParams(epsilon=1.0)
    for bad in (dict(epsilon=0), dict(epsilon=1, beta=1.0), dict(epsilon=1, eta=0)):
        with pytest.raises(ParameterError):
            PrivacyParams(**bad)


def test_dataset_neighbours():
    d = Dataset(("x", "y"))
    assert d.add("z").records == ("x", "y", "z")
    assert d.add("z").ids == (0, 1, 2)
    assert d.remove(0).ids == (1,)
    with pytest.raises(ParameterError):
        d.add("w", record_id=1)
    rows, counts = Dataset(((1, 0), (0, 1), (1, 0))).grouped
    assert counts.sum() == 3 and len(rows) == 2
