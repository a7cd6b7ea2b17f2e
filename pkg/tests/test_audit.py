import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privsub.audit import (
    OutcomeDistribution,
    appendix_c_closed_form,
    appendix_c_counterexample,
    appendix_c_size,
    at_above_probability,
    contract_check,
    dataset_family,
    empirical_distribution,
    exact_at_distribution,
    exact_em_distribution,
    exact_subsampled_distribution,
    max_z_score,
    neighbor_pairs,
    verify_dp,
)
from privsub.clustering import ClusterInstance, FiniteMetric, bicriteria_oracle
from privsub.core import LN2, CapacityError, Dataset, ParameterError, RandomSource, exp_mech_distribution, rate_for_target
from privsub.heavyhitters import thresh_monitor_oracle
from privsub.mechanisms import EmRound, ScoringOracle, run_repeated_at, run_repeated_em, run_subsampled, bind_em
from privsub.setcover import SetSystem, cover_round_oracle
from privsub.submodular import BudgetAdditive, coverage_records, greedy_oracle

COVERS = [(0,), (1,), (0, 1), (1, 2)]


def coverage_family(m=3, max_n=3):
    return BudgetAdditive(m), dataset_family(coverage_records(COVERS, m), max_n)


def test_single_round_matches_softmax():
    F, family = coverage_family()
    d = family[-1]
    dist = exact_em_distribution(greedy_oracle(F, 1), d, LN2)
    gains = F.marginal_gains(d, (), (0, 1, 2))
    probs = exp_mech_distribution((0, 1, 2), gains, LN2)
    for c in range(3):
        assert dist[(c,)] == pytest.approx(probs[c], abs=1e-15)


def test_uniform_law_on_empty_dataset():
    F = BudgetAdditive(3)
    dist = exact_em_distribution(greedy_oracle(F, 3), Dataset(()), LN2)
    assert len(dist) == 6
    assert all(q == pytest.approx(1 / 6) for q in dist.probs.values())


def test_at_survival():
    assert at_above_probability(3.0, 2.0, 1.0) == 1.0
    assert at_above_probability(0.0, 2.0, LN2) == pytest.approx(0.25)


def test_subsampled_degenerate_cases():
    F, family = coverage_family()
    oracle = greedy_oracle(F, 2)
    inner = lambda d: exact_em_distribution(oracle, d, LN2)  # noqa: E731
    d = family[-1]
    empty = inner(Dataset(()))
    at_zero = exact_subsampled_distribution(inner, d, 0.0)
    assert at_zero.probs == pytest.approx(empty.probs)
    one = Dataset(d.records[:1])
    p = 0.3
    mix = exact_subsampled_distribution(inner, one, p)
    full = inner(one)
    for o in mix.probs:
        assert mix[o] == pytest.approx(0.7 * empty[o] + 0.3 * full[o])
    with pytest.raises(ParameterError):
        exact_subsampled_distribution(inner, d, 1.0)


def test_all_exact_laws_sum_to_one():
    F, family = coverage_family()
    oracle = greedy_oracle(F, 2)
    at = thresh_monitor_oracle(2, 2, 1, 1.0)
    p = rate_for_target(0.5)
    for d in family:
        assert abs(exact_em_distribution(oracle, d, LN2).total - 1) < 1e-9
        inner = lambda x: exact_em_distribution(oracle, x, LN2)  # noqa: E731
        assert abs(exact_subsampled_distribution(inner, d, p).total - 1) < 1e-9
    for d in dataset_family([(a, b) for a in range(2) for b in range(2)], 2):
        assert abs(exact_at_distribution(at, d, LN2).total - 1) < 1e-9


def test_dataset_family_and_pairs():
    fam = dataset_family(["a", "b"], 2)
    assert [d.records for d in fam] == [(), ("a",), ("b",), ("a", "a"), ("a", "b"), ("b", "b")]
    pairs = {(s.records, b.records) for s, b in neighbor_pairs(fam)}
    assert pairs == {
        ((), ("a",)),
        ((), ("b",)),
        (("a",), ("a", "a")),
        (("b",), ("a", "b")),
        (("a",), ("a", "b")),
        (("b",), ("b", "b")),
    }


def test_verify_dp_constant_mechanism():
    dist = OutcomeDistribution({"x": 0.5, "y": 0.5})
    rep = verify_dp(lambda d: dist, neighbor_pairs(dataset_family([0], 2)), 0.1, "two_sided")
    assert rep.max_add_ratio == 0 and rep.max_remove_ratio == 0 and rep.passed


def test_verify_dp_flags_disjoint_support():
    law = lambda d: OutcomeDistribution({len(d): 1.0})  # noqa: E731
    rep = verify_dp(law, neighbor_pairs(dataset_family([0], 1)), 5.0, "add")
    assert not rep.passed and rep.max_add_ratio == math.inf
    out = json.loads(rep.to_json())
    assert out["max_add_ratio"] == "inf" and out["pass"] is False
    assert set(out) == {"claimed_eps", "max_add_ratio", "max_remove_ratio", "witness", "pass"}


def test_verify_dp_rejects_unknown_mode():
    with pytest.raises(ParameterError):
        verify_dp(lambda d: OutcomeDistribution({0: 1.0}), [], 1.0, "remove")


@given(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_two_sided_symmetry(a, b):
    pa = np.array(a) / sum(a)
    pb = np.array(b) / sum(b)
    d0, d1 = Dataset(()), Dataset((0,))
    law = lambda d: OutcomeDistribution(dict(enumerate(pa if len(d) == 0 else pb)))  # noqa: E731
    swapped = lambda d: OutcomeDistribution(dict(enumerate(pb if len(d) == 0 else pa)))  # noqa: E731
    r1 = verify_dp(law, [(d0, d1)], 10.0, "two_sided")
    r2 = verify_dp(swapped, [(d0, d1)], 10.0, "two_sided")
    assert r1.max_add_ratio == pytest.approx(r2.max_remove_ratio, abs=1e-12)
    assert r1.max_remove_ratio == pytest.approx(r2.max_add_ratio, abs=1e-12)


def test_add_only_mechanism_fails_two_sided():
    # Repeated-EM at ln 2 is add-DP but not remove-DP at ln 2 on this family
    F, family = coverage_family()
    oracle = greedy_oracle(F, 2)
    mech = lambda d: exact_em_distribution(oracle, d, LN2)  # noqa: E731
    pairs = neighbor_pairs(family)
    assert verify_dp(mech, pairs, LN2, "add").passed
    rep = verify_dp(mech, pairs, LN2, "two_sided")
    assert rep.max_remove_ratio > rep.max_add_ratio


def test_monte_carlo_agreement_em():
    F, family = coverage_family()
    oracle = greedy_oracle(F, 2)
    d = family[-1]
    exact = exact_em_distribution(oracle, d, LN2)
    rng = RandomSource(11)
    trials = 20_000
    freqs = empirical_distribution(lambda t: run_repeated_em(oracle, d, LN2, 1.0, rng).chosen, trials)
    assert max_z_score(exact, freqs, trials) < 4


def test_monte_carlo_agreement_subsampled():
    F, family = coverage_family()
    oracle = greedy_oracle(F, 2)
    d = family[-1]
    p = rate_for_target(0.5)
    exact = exact_subsampled_distribution(lambda x: exact_em_distribution(oracle, x, LN2), d, p)
    rng = RandomSource(12)
    trials = 20_000
    freqs = empirical_distribution(lambda t: run_subsampled(bind_em(oracle), d, 0.5, rng).chosen, trials)
    assert max_z_score(exact, freqs, trials) < 4


def test_monte_carlo_agreement_at():
    oracle = thresh_monitor_oracle(2, 2, 1, 1.0)
    d = Dataset(((0, 1), (0, 0)))
    exact = exact_at_distribution(oracle, d, LN2)
    rng = RandomSource(13)
    trials = 20_000
    freqs = empirical_distribution(lambda t: run_repeated_at(oracle, d, LN2, 1.0, rng).outcomes, trials)
    assert max_z_score(exact, freqs, trials) < 4


def test_max_z_score_detects_impossible_outcome():
    exact = OutcomeDistribution({"a": 1.0})
    assert max_z_score(exact, {"a": 0.9, "b": 0.1}, 10) == math.inf


def test_appendix_c_size_formula():
    m = appendix_c_size(2, 1.0, 1.5)
    e = math.e
    assert m == math.ceil(1 + (e - 1) * 2 / (e - math.exp(0.75)))
    assert m == 7


def test_appendix_c_counterexample():
    rep = appendix_c_counterexample(2, 1.0, 1.5)
    w = rep.witness
    assert w["exceeds"] and not rep.passed
    assert w["closed_form_ratio"] > math.exp(1.5)
    assert abs(w["exact_ratio"] - w["closed_form_ratio"]) < 1e-9
    assert rep.max_remove_ratio > 1.5


def test_appendix_c_closed_form_single_round():
    # L=1: (e^eps (m-1) + 1) / m
    assert float(appendix_c_closed_form(1, 1.0, 5)) == pytest.approx((math.e * 4 + 1) / 5)


def test_appendix_c_guards():
    with pytest.raises(ParameterError):
        appendix_c_counterexample(2, 1.0, 2.0)
    with pytest.raises(CapacityError):
        appendix_c_counterexample(2, 1.0, 2.0 - 1e-9, max_m=10**4)


def test_capacity_errors():
    F = BudgetAdditive(6)
    with pytest.raises(CapacityError):
        exact_em_distribution(greedy_oracle(F, 6), Dataset(()), LN2, cap=100)
    with pytest.raises(CapacityError):
        exact_at_distribution(thresh_monitor_oracle(4, 2, 1, 1.0), Dataset(()), LN2, cap=100)
    with pytest.raises(CapacityError):
        exact_subsampled_distribution(lambda d: OutcomeDistribution({0: 1.0}), Dataset(tuple(range(10))), 0.5, cap=100)


def test_contract_greedy_coverage():
    for m in (3, 4):
        F = BudgetAdditive(m)
        fam = dataset_family(coverage_records([(0,), (1,), (0, 1), (m - 2, m - 1)], m), 3)
        assert contract_check(greedy_oracle(F, 2), neighbor_pairs(fam), 1.0).passed


def test_contract_setcover_round():
    fam = dataset_family(coverage_records(COVERS, 3), 3)
    oracle = cover_round_oracle(SetSystem(3), (0, 1, 2), (), 1.0)
    assert contract_check(oracle, neighbor_pairs(fam), 1.0).passed
    oracle = cover_round_oracle(SetSystem(3), (2, 0), (1,), 0.5)
    assert contract_check(oracle, neighbor_pairs(fam), 1.0).passed


def test_contract_bicriteria():
    metric = FiniteMetric(np.array([[0.0, 0.3, 1.0], [0.3, 0.0, 0.8], [1.0, 0.8, 0.0]]))
    oracle = bicriteria_oracle(ClusterInstance(metric, Dataset(()), 1), 2)
    assert contract_check(oracle, neighbor_pairs(dataset_family([0, 1, 2], 3)), 1.0).passed


def test_contract_heavy_hitter_oracle():
    rows = [(a, b) for a in range(2) for b in range(2)]
    fam = dataset_family(rows, 2)
    for k in (1, 2):
        oracle = thresh_monitor_oracle(2, 2, k, 1.0)
        assert contract_check(oracle, neighbor_pairs(fam), float(k)).passed
    # with Delta below k a single user can push two reported counts
    rep = contract_check(thresh_monitor_oracle(2, 2, 2, 1.0), neighbor_pairs(fam), 1.0)
    assert not rep.passed and rep.witness["violation"] == "sensitivity"


def test_contract_anti_monotone_fails():
    F = BudgetAdditive(3)
    good = greedy_oracle(F, 2)

    def propose(history):
        r = good.propose(history)
        return EmRound(r.candidates, lambda D, r=r: -np.asarray(r.score(D)))

    bad = ScoringOracle(2, propose)
    fam = dataset_family(coverage_records(COVERS, 3), 2)
    rep = contract_check(bad, neighbor_pairs(fam), 1.0)
    assert not rep.passed
    w = rep.witness
    assert w["violation"] == "monotonicity"
    assert w["value_larger"] < w["value_smaller"]
    assert len(w["larger"]) == len(w["smaller"]) + 1
