"""Allocation scoring: per-statistic and per-equation noise scores.

A score is the rmse of the noise a consumer sees; lower is better. With
normalization on (the default) each rmse is divided by the corresponding
sensitivity so that statistics of very different magnitudes weigh equally.
The overall metric for an allocation is the plain sum of all scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

from .propagation import propagate_variance_analytic, propagate_variance_montecarlo
from .workload import (
    BudgetAllocation,
    EquationSpec,
    MetricOptions,
    StatTuple,
    Workload,
    consolidate,
    validate_allocation,
)

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class UtilityReport:
    """Score breakdown for one allocation.

    metric is exactly the sum of us_terms and ue_terms. us_terms holds the
    per-statistic scores keyed by statistic id, ue_terms the per-equation
    scores keyed by equation id.
    """

    metric: float
    us_terms: dict[str, float]
    ue_terms: dict[str, float]
    options: MetricOptions

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "us_terms": dict(self.us_terms),
            "ue_terms": dict(self.ue_terms),
            "options": self.options.to_dict(),
        }


@dataclass(frozen=True)
class RankedAllocation:
    name: str
    rank: int
    report: UtilityReport

    def to_dict(self) -> dict[str, Any]:
        entry = self.report.to_dict()
        entry["name"] = self.name
        entry["rank"] = self.rank
        return entry


def statistic_score(record: StatTuple, options: MetricOptions) -> float:
    """Noise rmse of one released statistic: sqrt(2) * sensitivity / budget.

    With normalization on, the rmse is divided by the sensitivity, which
    leaves sqrt(2) / budget regardless of the statistic's scale.
    """
    if not record.sensitivity > 0:
        raise ValueError(f"NonPositiveSensitivity: sensitivity must be positive, got {record.sensitivity!r}")
    if not record.budget > 0:
        raise ValueError(f"NonPositiveBudget: budget must be positive, got {record.budget!r}")
    if options.normalize_by_sensitivity:
        return _SQRT2 / record.budget
    return _SQRT2 * record.sensitivity / record.budget


def equation_score(
    equation: EquationSpec,
    workload: Workload,
    allocation: BudgetAllocation,
    options: MetricOptions | None = None,
    seed: int | None = None,
) -> float:
    """Propagated noise rmse of one equation, per the configured estimator.

    With normalization on, the rmse is divided by the equation's
    direct-query sensitivity.
    """
    options = options if options is not None else workload.options
    if options.estimator == "montecarlo":
        if seed is None:
            raise ValueError("the montecarlo estimator requires an explicit seed")
        result = propagate_variance_montecarlo(
            equation.expression, workload, allocation, options.mc_samples, seed
        )
    else:
        result = propagate_variance_analytic(equation.expression, workload, allocation)
    if options.normalize_by_sensitivity:
        return result.rmse / equation.sensitivity
    return result.rmse


def score_allocation(
    workload: Workload,
    allocation: BudgetAllocation,
    options: MetricOptions | None = None,
    seed: int | None = None,
) -> UtilityReport:
    """Scores an allocation: sum of all statistic and equation scores."""
    options = options if options is not None else workload.options
    allocation = validate_allocation(workload, allocation)
    us_terms: dict[str, float] = {}
    for spec, record in zip(workload.statistics, consolidate(workload, allocation)):
        us_terms[spec.id] = statistic_score(record, options)
    ue_terms = {
        equation.id: equation_score(equation, workload, allocation, options, seed)
        for equation in workload.equations
    }
    metric = math.fsum(us_terms.values()) + math.fsum(ue_terms.values())
    return UtilityReport(metric=metric, us_terms=us_terms, ue_terms=ue_terms, options=options)


def compare_allocations(
    workload: Workload,
    allocations: Sequence[tuple[str, BudgetAllocation]],
    options: MetricOptions | None = None,
    seed: int | None = None,
) -> list[RankedAllocation]:
    """Ranks named allocations by metric, best (lowest) first.

    Ties keep their input order. At least two allocations are required.
    """
    if len(allocations) < 2:
        raise ValueError(f"need at least two allocations to compare, got {len(allocations)}")
    scored = [(name, score_allocation(workload, allocation, options, seed)) for name, allocation in allocations]
    order = sorted(range(len(scored)), key=lambda i: scored[i][1].metric)
    return [
        RankedAllocation(name=scored[i][0], rank=position + 1, report=scored[i][1])
        for position, i in enumerate(order)
    ]
