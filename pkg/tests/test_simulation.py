import math

import numpy as np
import pytest

from dpbudget import propagate_variance_analytic, simulate_pipeline, simulate_with_series
from dpbudget.errors import HeavyTailWarning

from helpers import allocation, make_workload, paper_workload

SQRT2 = math.sqrt(2.0)


def test_simulation_is_deterministic():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    first = simulate_pipeline(workload, alloc, trials=2000, seed=13)
    second = simulate_pipeline(workload, alloc, trials=2000, seed=13)
    assert first == second
    assert first != simulate_pipeline(workload, alloc, trials=2000, seed=14)


def test_per_statistic_rmse_tracks_prediction():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    report = simulate_pipeline(workload, alloc, trials=10**5, seed=5150)
    for stat_id, summary in report.per_statistic.items():
        assert summary.predicted_rmse == SQRT2 * 4.0
        assert abs(summary.empirical_rmse - summary.predicted_rmse) / summary.predicted_rmse <= 0.02


def test_rmse_convergence_rates():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    coarse = simulate_pipeline(workload, alloc, trials=10**4, seed=5150)
    fine = simulate_pipeline(workload, alloc, trials=10**5, seed=5150)
    for stat_id in workload.statistic_ids:
        predicted = coarse.per_statistic[stat_id].predicted_rmse
        assert abs(coarse.per_statistic[stat_id].empirical_rmse - predicted) / predicted <= 0.06
        assert abs(fine.per_statistic[stat_id].empirical_rmse - predicted) / predicted <= 0.02


def test_linear_equation_rmse_tracks_analytic_prediction():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    report = simulate_pipeline(workload, alloc, trials=10**5, seed=777)
    summary = report.per_equation["eq1"]
    predicted = propagate_variance_analytic(workload.equations[0].expression, workload, alloc).rmse
    assert summary.predicted_rmse == predicted
    assert abs(summary.empirical_rmse - predicted) / predicted <= 0.02


def test_bare_reference_equation_reproduces_statistic_errors():
    workload = make_workload(
        epsilon=1.0,
        stats=(("s1", 1.0, 10.0), ("s2", 1.0, 20.0)),
        equations=(("echo", "s1", 1.0),),
    )
    alloc = allocation(workload, 0.5, 0.5)
    report, series = simulate_with_series(workload, alloc, trials=5000, seed=99)
    assert np.array_equal(series["eq:echo"], series["stat:s1"])
    assert report.per_equation["echo"].empirical_rmse == report.per_statistic["s1"].empirical_rmse


def test_single_trial_report_is_flagged_unreliable():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    report = simulate_pipeline(workload, alloc, trials=1, seed=4)
    assert report.trials == 1
    assert not report.rmse_reliable
    assert set(report.per_statistic) == {"s1", "s2", "s3", "s4"}
    for summary in report.per_statistic.values():
        assert summary.empirical_rmse >= 0.0


def test_trials_must_be_positive():
    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    with pytest.raises(ValueError):
        simulate_pipeline(workload, alloc, trials=0, seed=1)


def test_heavy_tailed_equation_aborts():
    workload = make_workload(
        epsilon=2.0,
        stats=(("s1", 1.0, 10.0), ("s4", 1e-10, 1e-11)),
        equations=(("ratio", "s1 / s4", 1.0),),
    )
    alloc = allocation(workload, 1.0, 1.0)
    with pytest.raises(HeavyTailWarning):
        simulate_pipeline(workload, alloc, trials=10**4, seed=3)


def test_release_matches_first_simulation_trial():
    from dpbudget import release_statistics

    workload = paper_workload()
    alloc = allocation(workload, 0.25, 0.25, 0.25, 0.25)
    released = release_statistics(workload, alloc, seed=321)
    _, series = simulate_with_series(workload, alloc, trials=3, seed=321)
    refs = workload.reference_values()
    for stat_id in workload.statistic_ids:
        assert released[stat_id] == refs[stat_id] + series[f"stat:{stat_id}"][0]
