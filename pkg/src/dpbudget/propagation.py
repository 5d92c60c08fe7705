"""Predicting the noise an equation inherits from its noisy inputs.

Two routes are provided and meant to cross-check each other: a first-order
(delta-method) analytic prediction, exact for linear equations, and a
seeded Monte Carlo estimate that replays noisy releases through the
equation. The Monte Carlo report includes a symmetrically trimmed rmse
because quotients of noisy values can have very heavy tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DivisionNearZeroError, HeavyTailWarning, MissingValueError
from .expressions import (
    DIVISION_GUARD,
    Binary,
    BinaryOp,
    Constant,
    Expr,
    Negate,
    StatRef,
    evaluate,
    evaluate_batch,
    free_statistics,
)
from .noise import noise_stream, sample_noise_batch
from .workload import BudgetAllocation, Workload, validate_allocation

# Abort Monte Carlo when more than this fraction of samples divide by ~zero.
HEAVY_TAIL_FRACTION = 0.001
# Fraction of samples dropped from each tail for the trimmed rmse.
TRIM_PER_TAIL = 0.0005


@dataclass(frozen=True)
class MonteCarloDetail:
    """Extras reported by the Monte Carlo route.

    samples counts the draws actually used (near-zero-denominator draws
    are excluded); trimmed_rmse drops TRIM_PER_TAIL of each error tail.
    """

    samples: int
    bias_estimate: float
    trimmed_rmse: float


@dataclass(frozen=True)
class PropagationResult:
    variance: float
    rmse: float
    method: str
    mc_detail: MonteCarloDetail | None = None


def gradient_at_reference(ast: Expr, refs: Mapping[str, float]) -> dict[str, float]:
    """Exact partial derivatives of the expression at the reference point.

    Computed by recursive differentiation of the tree; the result has one
    entry per referenced statistic (zero entries included, e.g. for
    "s1 - s1").

    Raises:
        MissingValueError: a referenced id has no reference value.
        DivisionNearZeroError: a denominator magnitude at the reference
            point falls below DIVISION_GUARD.
    """
    _, gradient = _value_and_gradient(ast, refs)
    return gradient


def _value_and_gradient(node: Expr, refs: Mapping[str, float]) -> tuple[float, dict[str, float]]:
    if isinstance(node, Constant):
        return node.value, {}
    if isinstance(node, StatRef):
        try:
            return float(refs[node.name]), {node.name: 1.0}
        except KeyError:
            raise MissingValueError(node.name) from None
    if isinstance(node, Negate):
        value, gradient = _value_and_gradient(node.operand, refs)
        return -value, {name: -g for name, g in gradient.items()}
    if isinstance(node, Binary):
        lv, lg = _value_and_gradient(node.left, refs)
        rv, rg = _value_and_gradient(node.right, refs)
        names = lg.keys() | rg.keys()
        if node.op is BinaryOp.ADD:
            return lv + rv, {n: lg.get(n, 0.0) + rg.get(n, 0.0) for n in names}
        if node.op is BinaryOp.SUB:
            return lv - rv, {n: lg.get(n, 0.0) - rg.get(n, 0.0) for n in names}
        if node.op is BinaryOp.MUL:
            return lv * rv, {n: rv * lg.get(n, 0.0) + lv * rg.get(n, 0.0) for n in names}
        if abs(rv) < DIVISION_GUARD:
            raise DivisionNearZeroError(f"denominator {rv!r} is within {DIVISION_GUARD} of zero")
        return lv / rv, {n: lg.get(n, 0.0) / rv - lv * rg.get(n, 0.0) / (rv * rv) for n in names}
    raise TypeError(f"not an expression node: {node!r}")


def propagate_variance_analytic(ast: Expr, workload: Workload, allocation: BudgetAllocation) -> PropagationResult:
    """First-order prediction of the equation's output-noise variance.

    Each statistic's noise is an independent Laplace draw, so the
    linearized variance is the gradient-weighted sum of the per-statistic
    variances. Exact when the expression is linear in the statistics.
    """
    allocation = validate_allocation(workload, allocation)
    gradient = gradient_at_reference(ast, workload.reference_values())
    terms = []
    for spec in workload.statistics:
        g = gradient.get(spec.id)
        if g is None:
            continue
        scale = spec.sensitivity / allocation.budgets[spec.id]
        terms.append(g * g * 2.0 * scale * scale)
    variance = math.fsum(terms)
    return PropagationResult(variance=variance, rmse=math.sqrt(variance), method="analytic")


def propagate_variance_montecarlo(
    ast: Expr,
    workload: Workload,
    allocation: BudgetAllocation,
    samples: int,
    seed: int,
) -> PropagationResult:
    """Monte Carlo estimate of the equation's output-noise distribution.

    Draws ``samples`` joint noise vectors, evaluates the expression at
    reference-plus-noise and at the reference, and summarizes the
    differences. Deterministic per seed. Samples whose denominators come
    within DIVISION_GUARD of zero are excluded; if more than
    HEAVY_TAIL_FRACTION of them do, the run aborts.

    Raises:
        HeavyTailWarning: too many excluded samples.
        DivisionNearZeroError: the expression is degenerate at the
            reference point itself.
    """
    allocation = validate_allocation(workload, allocation)
    if samples < 1000:
        raise ValueError(f"samples must be at least 1000, got {samples!r}")
    refs = workload.reference_values()
    reference_output = evaluate(ast, refs)
    used = free_statistics(ast)
    noisy: dict[str, np.ndarray] = {}
    for index, spec in enumerate(workload.statistics):
        if spec.id not in used:
            continue
        scale = spec.sensitivity / allocation.budgets[spec.id]
        noisy[spec.id] = spec.reference_value + sample_noise_batch(scale, noise_stream(seed, index), samples)
    invalid = np.zeros(samples, dtype=bool)
    outputs = evaluate_batch(ast, noisy, invalid)
    errors = np.asarray(outputs, dtype=float) - reference_output
    if errors.ndim == 0:
        errors = np.full(samples, float(errors))
    excluded = int(invalid.sum())
    if excluded > HEAVY_TAIL_FRACTION * samples:
        raise HeavyTailWarning(
            f"{excluded} of {samples} samples hit near-zero denominators "
            f"(limit {HEAVY_TAIL_FRACTION:.1%})"
        )
    kept = errors[~invalid] if excluded else errors
    return PropagationResult(
        variance=float(np.var(kept)),
        rmse=float(np.sqrt(np.mean(np.square(kept)))),
        method="montecarlo",
        mc_detail=MonteCarloDetail(
            samples=int(kept.size),
            bias_estimate=float(np.mean(kept)),
            trimmed_rmse=trimmed_rmse(kept),
        ),
    )


def trimmed_rmse(errors: np.ndarray) -> float:
    """Rmse after dropping TRIM_PER_TAIL of the samples from each tail."""
    drop = int(errors.size * TRIM_PER_TAIL)
    if drop == 0:
        return float(np.sqrt(np.mean(np.square(errors))))
    core = np.sort(errors)[drop : errors.size - drop]
    return float(np.sqrt(np.mean(np.square(core))))
