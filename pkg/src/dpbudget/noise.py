"""Laplace-mechanism noise: profiles, seeded sampling, and noisy releases.

Sampling is counter-based and reproducible: statistic ``i`` under seed
``s`` owns an independent Philox stream keyed by ``(s, i)``, and the
``t``-th variate of that stream is the noise for trial ``t``. The same
(seed, statistic index, trial index) always yields the same draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .workload import BudgetAllocation, Workload, validate_allocation

_UINT64_MASK = (1 << 64) - 1
# Largest |u| fed to the inverse CDF; keeps log1p(-2|u|) finite.
_U_LIMIT = 0.5 - 2.0**-54


@dataclass(frozen=True)
class NoiseProfile:
    """Noise summary for one Laplace release.

    scale is sensitivity/budget; variance is 2*scale**2; expected_abs is
    the mean absolute noise, which equals the scale.
    """

    scale: float
    variance: float
    expected_abs: float


def noise_profile(sensitivity: float, budget: float) -> NoiseProfile:
    """Characterizes the noise a statistic receives under a given budget."""
    if not sensitivity > 0:
        raise ValueError(f"NonPositiveSensitivity: sensitivity must be positive, got {sensitivity!r}")
    if not budget > 0:
        raise ValueError(f"NonPositiveBudget: budget must be positive, got {budget!r}")
    scale = sensitivity / budget
    return NoiseProfile(scale=scale, variance=2.0 * scale * scale, expected_abs=scale)


def noise_stream(seed: int, index: int) -> np.random.Generator:
    """Independent deterministic stream for one statistic index under one seed."""
    key = ((seed & _UINT64_MASK) << 64) | (index & _UINT64_MASK)
    return np.random.Generator(np.random.Philox(key=key))


def sample_noise_batch(scale: float, stream: np.random.Generator, count: int) -> np.ndarray:
    """Draws ``count`` consecutive Laplace(scale) variates from a stream.

    Inverse-CDF construction: with u uniform on (-0.5, 0.5), the draw is
    -scale * sign(u) * ln(1 - 2|u|).
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    u = stream.random(count) - 0.5
    magnitude = np.minimum(np.abs(u), _U_LIMIT)
    return -scale * np.sign(u) * np.log1p(-2.0 * magnitude)


def sample_noise(scale: float, stream: np.random.Generator) -> float:
    """Draws the next Laplace(scale) variate from a stream."""
    return float(sample_noise_batch(scale, stream, 1)[0])


def release_statistics(workload: Workload, allocation: BudgetAllocation, seed: int) -> dict[str, float]:
    """Releases every statistic once: reference value plus fresh Laplace noise.

    Deterministic per seed; statistic order and ids follow the workload.
    """
    allocation = validate_allocation(workload, allocation)
    released = {}
    for index, spec in enumerate(workload.statistics):
        scale = spec.sensitivity / allocation.budgets[spec.id]
        released[spec.id] = spec.reference_value + sample_noise(scale, noise_stream(seed, index))
    return released


def consumed_budget(allocation: BudgetAllocation) -> float:
    """Total privacy budget spent by the release, by sequential composition."""
    return math.fsum(allocation.budgets.values())
