import math

import pytest

from dpbudget import (
    MetricOptions,
    StatTuple,
    compare_allocations,
    equation_score,
    grid_search,
    score_allocation,
    statistic_score,
)

from helpers import allocation, make_workload, paper_workload

SQRT2 = math.sqrt(2.0)

NORMALIZED = MetricOptions(normalize_by_sensitivity=True)
RAW = MetricOptions(normalize_by_sensitivity=False)


def test_statistic_score_normalized_ignores_sensitivity():
    a = statistic_score(StatTuple(0.0, 1.0, 0.5), NORMALIZED)
    b = statistic_score(StatTuple(0.0, 100.0, 0.5), NORMALIZED)
    assert a == b == pytest.approx(2 * SQRT2, rel=1e-15)


def test_statistic_score_unnormalized():
    assert statistic_score(StatTuple(0.0, 3.0, 0.5), RAW) == pytest.approx(6 * SQRT2, rel=1e-15)


def test_statistic_score_guards():
    with pytest.raises(ValueError, match="NonPositiveBudget"):
        statistic_score(StatTuple(0.0, 1.0, 0.0), NORMALIZED)
    with pytest.raises(ValueError, match="NonPositiveSensitivity"):
        statistic_score(StatTuple(0.0, -1.0, 0.5), NORMALIZED)


def linear_workload():
    return make_workload(
        epsilon=0.5,
        stats=(("s2", 1.0, 5.0), ("s3", 1.0, 7.0)),
        equations=(("e", "s2 + s3", 2.0),),
    )


def test_equation_score_normalized_and_raw():
    workload = linear_workload()
    alloc = allocation(workload, 0.25, 0.25)
    eq = workload.equations[0]
    assert equation_score(eq, workload, alloc, NORMALIZED) == pytest.approx(4.0, rel=1e-12)
    assert equation_score(eq, workload, alloc, RAW) == pytest.approx(8.0, rel=1e-12)


def test_single_statistic_equation_score_equals_statistic_score():
    for options in (NORMALIZED, RAW):
        workload = make_workload(
            epsilon=1.0,
            stats=(("s1", 2.5, 4.0),),
            equations=(("mirror", "s1", 2.5),),
        )
        alloc = allocation(workload, 1.0)
        record = StatTuple(4.0, 2.5, 1.0)
        assert equation_score(workload.equations[0], workload, alloc, options) == pytest.approx(
            statistic_score(record, options), rel=1e-14
        )


def test_metric_two_statistics_no_equations():
    workload = make_workload(epsilon=1.0, stats=(("s1", 1.0, 0.0), ("s2", 1.0, 0.0)))
    report = score_allocation(workload, allocation(workload, 0.5, 0.5), NORMALIZED)
    assert report.metric == pytest.approx(4 * SQRT2, rel=1e-14)
    assert report.ue_terms == {}
    assert report.metric == pytest.approx(sum(report.us_terms.values()), rel=1e-15)


def test_metric_equals_sum_of_terms():
    workload = paper_workload()
    report = score_allocation(workload, allocation(workload, 0.25, 0.25, 0.25, 0.25))
    total = math.fsum(report.us_terms.values()) + math.fsum(report.ue_terms.values())
    assert report.metric == pytest.approx(total, rel=1e-12)
    assert report.metric > 0.0
    assert all(v >= 0.0 for v in report.us_terms.values())
    assert all(v >= 0.0 for v in report.ue_terms.values())
    assert set(report.us_terms) == {"s1", "s2", "s3", "s4"}
    assert set(report.ue_terms) == {"eq1", "eq2"}


def test_removing_equation_subtracts_its_term():
    workload = paper_workload()
    alloc_budgets = {"s1": 0.25, "s2": 0.25, "s3": 0.25, "s4": 0.25}
    full = score_allocation(workload, allocation(workload, 0.25, 0.25, 0.25, 0.25))
    reduced_workload = make_workload(
        epsilon=1.0,
        stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0), ("s3", 1.0, 7.0), ("s4", 1.0, 100.0)),
        equations=(("eq1", "s2 + s3", 2.0),),
    )
    reduced = score_allocation(reduced_workload, allocation(reduced_workload, 0.25, 0.25, 0.25, 0.25))
    assert full.metric - reduced.metric == pytest.approx(full.ue_terms["eq2"], rel=1e-12)


def test_metric_montecarlo_matches_analytic_on_paper_workload():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    analytic = score_allocation(workload, alloc)
    mc_options = MetricOptions(estimator="montecarlo", mc_samples=10**6)
    sampled = score_allocation(workload, alloc, mc_options, seed=2024)
    for eq_id in analytic.ue_terms:
        assert sampled.ue_terms[eq_id] == pytest.approx(analytic.ue_terms[eq_id], rel=0.02)
    assert sampled.metric == pytest.approx(analytic.metric, rel=0.02)


def test_metric_requires_seed_for_montecarlo():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    with pytest.raises(ValueError, match="seed"):
        score_allocation(workload, alloc, MetricOptions(estimator="montecarlo"))


def test_budget_scaling_law():
    workload = paper_workload()
    alloc = allocation(workload, 0.1, 0.3, 0.35, 0.25)
    base = score_allocation(workload, alloc).metric
    for k in (2.0, 10.0, 100.0):
        scaled_workload = make_workload(
            epsilon=k,
            stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0), ("s3", 1.0, 7.0), ("s4", 1.0, 100.0)),
            equations=(("eq1", "s2 + s3", 2.0), ("eq2", "(s1 + s2) / s4", 1.0)),
        )
        scaled_alloc = allocation(scaled_workload, 0.1 * k, 0.3 * k, 0.35 * k, 0.25 * k)
        scaled = score_allocation(scaled_workload, scaled_alloc).metric
        assert base == pytest.approx(k * scaled, rel=1e-12)


def test_sensitivity_rescaling_invariance():
    def build(c, normalized):
        return make_workload(
            epsilon=1.0,
            stats=(("s1", 1.0 * c, 10.0), ("s2", 2.0 * c, 20.0), ("s4", 0.5 * c, 50.0)),
            equations=(("e", "(s1 + s2) / s4", 1.5 * c),),
            normalize_by_sensitivity=normalized,
        )

    budgets = (0.2, 0.5, 0.3)
    base_norm = score_allocation(build(1.0, True), allocation(build(1.0, True), *budgets))
    scaled_norm = score_allocation(build(4.0, True), allocation(build(4.0, True), *budgets))
    assert scaled_norm.metric == base_norm.metric
    assert scaled_norm.us_terms == base_norm.us_terms
    assert scaled_norm.ue_terms == base_norm.ue_terms

    base_raw = score_allocation(build(1.0, False), allocation(build(1.0, False), *budgets))
    scaled_raw = score_allocation(build(4.0, False), allocation(build(4.0, False), *budgets))
    assert scaled_raw.metric == 4.0 * base_raw.metric

    odd = score_allocation(build(3.0, False), allocation(build(3.0, False), *budgets))
    assert odd.metric == pytest.approx(3.0 * base_raw.metric, rel=1e-12)


def test_metric_decreases_along_relaxed_budget_ray():
    workload = paper_workload()
    previous = math.inf
    for k in (1.0, 2.0, 4.0, 8.0):
        scaled_workload = make_workload(
            epsilon=k,
            stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0), ("s3", 1.0, 7.0), ("s4", 1.0, 100.0)),
            equations=(("eq1", "s2 + s3", 2.0), ("eq2", "(s1 + s2) / s4", 1.0)),
        )
        value = score_allocation(scaled_workload, allocation(scaled_workload, *(0.25 * k,) * 4)).metric
        assert value < previous
        previous = value


def test_compare_prefers_uniform_over_starving_the_equation():
    workload = make_workload(
        epsilon=1.0,
        stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0), ("s3", 1.0, 7.0), ("s4", 1.0, 100.0)),
        equations=(("eq1", "s2 + s3", 2.0),),
    )
    uniform = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    starving = allocation(workload, 0.45, 0.05, 0.05, 0.45)
    ranking = compare_allocations(workload, [("uniform", uniform), ("starving", starving)])
    assert [entry.name for entry in ranking] == ["uniform", "starving"]
    assert ranking[0].rank == 1 and ranking[1].rank == 2
    oracle = grid_search(workload, 60)
    assert oracle.metric <= ranking[0].report.metric + 1e-9


def test_compare_tie_keeps_input_order():
    workload = make_workload()
    alloc = allocation(workload, 0.5, 0.5)
    ranking = compare_allocations(workload, [("first", alloc), ("second", alloc)])
    assert [entry.name for entry in ranking] == ["first", "second"]
    assert ranking[0].report.metric == ranking[1].report.metric


def test_compare_requires_two_allocations():
    workload = make_workload()
    with pytest.raises(ValueError):
        compare_allocations(workload, [("only", allocation(workload, 0.5, 0.5))])


def test_compare_ranking_same_for_both_estimators_on_linear_workload():
    workload = make_workload(
        epsilon=1.0,
        stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0), ("s3", 1.0, 7.0)),
        equations=(("eq1", "s2 + s3", 2.0), ("eq2", "s1 - s3", 1.0)),
    )
    candidates = [
        ("uniform", allocation(workload, 1 / 3, 1 / 3, 1 / 3)),
        ("tilted", allocation(workload, 0.2, 0.4, 0.4)),
        ("skewed", allocation(workload, 0.6, 0.2, 0.2)),
    ]
    analytic = compare_allocations(workload, candidates)
    mc = compare_allocations(
        workload, candidates, MetricOptions(estimator="montecarlo", mc_samples=200_000), seed=99
    )
    assert [entry.name for entry in analytic] == [entry.name for entry in mc]
