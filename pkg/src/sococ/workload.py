"""Stochastic service-request stream generation.

Requests carry a mode, a workload in SCU and a service duration. Per request
the generator consumes random draws in a fixed order (inter-arrival, mode,
workload, duration, entry periphery) so streams stay reproducible across
refactors.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

import numpy as np

from .errors import ConfigurationError

MODE_PROB_TOL = 1e-12


class Mode(IntEnum):
    """Server / request operation modes. SLEEP is a server-only state."""

    SLEEP = 0
    M1 = 1
    M2 = 2
    M3 = 3


REQUEST_MODES = (Mode.M1, Mode.M2, Mode.M3)


@dataclass(frozen=True)
class DistributionSpec:
    """One-dimensional sampling distribution.

    kind        param1              param2
    exponential mean (> 0)          unused
    pareto      shape alpha (> 1)   scale x_m (> 0)
    uniform     lower bound         upper bound (>= lower)
    """

    kind: str
    param1: float
    param2: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "exponential":
            if self.param1 <= 0:
                raise ConfigurationError("exponential mean must be > 0")
        elif self.kind == "pareto":
            # alpha <= 1 has an infinite mean, which breaks load accounting.
            if self.param1 <= 1:
                raise ConfigurationError("pareto shape alpha must be > 1")
            if self.param2 <= 0:
                raise ConfigurationError("pareto scale must be > 0")
        elif self.kind == "uniform":
            if self.param1 > self.param2:
                raise ConfigurationError("uniform lower bound exceeds upper bound")
        else:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")

    def mean(self) -> float:
        if self.kind == "exponential":
            return self.param1
        if self.kind == "pareto":
            return self.param1 * self.param2 / (self.param1 - 1.0)
        return 0.5 * (self.param1 + self.param2)


@dataclass(frozen=True)
class ServiceRequest:
    id: int
    arrival_time: float
    mode: Mode
    workload: float     # SCU
    duration: float     # simulated time units
    entry_periphery: int


@dataclass(frozen=True)
class WorkloadConfig:
    interarrival: DistributionSpec
    service: DistributionSpec
    workload_range: tuple[float, float]
    mode_probabilities: tuple[float, float, float]
    n_requests: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_requests < 1:
            raise ConfigurationError("n_requests must be >= 1")
        lo, hi = self.workload_range
        if lo <= 0 or hi < lo:
            raise ConfigurationError("workload_range must satisfy 0 < lo <= hi")
        probs = self.mode_probabilities
        if len(probs) != 3 or any(p < 0 for p in probs):
            raise ConfigurationError("mode_probabilities must be three non-negative values")
        if abs(sum(probs) - 1.0) > MODE_PROB_TOL:
            raise ConfigurationError("mode_probabilities must sum to 1")
        # durations and inter-arrival gaps must be positive / non-negative
        if self.service.kind == "uniform" and self.service.param1 <= 0:
            raise ConfigurationError("uniform service durations must be > 0")
        if self.interarrival.kind == "uniform" and self.interarrival.param1 < 0:
            raise ConfigurationError("uniform inter-arrival times must be >= 0")
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")


def _unit(rng: np.random.Generator) -> float:
    """Uniform draw from the open interval (0, 1)."""
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def sample(dist: DistributionSpec, rng: np.random.Generator) -> float:
    """Draw one value: exponential -mean*ln(u), pareto x_m*u^(-1/alpha),
    uniform lo + u*(hi - lo), with u uniform on (0, 1)."""
    u = _unit(rng)
    if dist.kind == "exponential":
        return -dist.param1 * np.log(u)
    if dist.kind == "pareto":
        return dist.param2 * u ** (-1.0 / dist.param1)
    return dist.param1 + u * (dist.param2 - dist.param1)


def _draw_mode(rng: np.random.Generator, probs: tuple[float, float, float]) -> Mode:
    u = _unit(rng)
    if u < probs[0]:
        return Mode.M1
    if u < probs[0] + probs[1]:
        return Mode.M2
    return Mode.M3


def generate_stream(
    config: WorkloadConfig,
    n_periphery: int,
    rng: np.random.Generator | None = None,
) -> Iterator[ServiceRequest]:
    """Yield exactly n_requests requests in arrival order, lazily.

    Arrival times accumulate the inter-arrival samples; the entry periphery
    is uniform over [0, n_periphery). The same (config, seed) regenerates an
    element-wise identical stream.
    """
    if n_periphery < 1:
        raise ConfigurationError("n_periphery must be >= 1")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    workload_dist = DistributionSpec("uniform", *config.workload_range)
    t = 0.0
    for i in range(config.n_requests):
        t += sample(config.interarrival, rng)
        mode = _draw_mode(rng, config.mode_probabilities)
        workload = sample(workload_dist, rng)
        duration = sample(config.service, rng)
        entry = int(rng.integers(n_periphery))
        yield ServiceRequest(
            id=i,
            arrival_time=t,
            mode=mode,
            workload=workload,
            duration=duration,
            entry_periphery=entry,
        )
