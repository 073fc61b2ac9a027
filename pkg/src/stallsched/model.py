"""Domain types: job types, servers, service laws, configurations and weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

# Absolute slack on capacity comparisons; absorbs decimal noise such as 17.1 GB.
CAPACITY_SLACK = 1e-9

ResourceVector = tuple[float, ...]
Configuration = tuple[int, ...]


def resource_vector(amounts: Sequence[float]) -> ResourceVector:
    vec = tuple(float(a) for a in amounts)
    if not vec:
        raise ValueError("resource vector must have at least one component")
    for a in vec:
        if not math.isfinite(a) or a < 0:
            raise ValueError(f"resource amounts must be finite and >= 0, got {vec}")
    return vec


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class HyperExponential:
    """Mixture of exponentials: branch i is chosen with probability p_i."""

    branches: tuple[tuple[float, float], ...]  # (probability, rate)

    def __post_init__(self):
        if not self.branches:
            raise ValueError("hyper-exponential needs at least one branch")
        for p, rate in self.branches:
            if not (p > 0 and math.isfinite(rate) and rate > 0):
                raise ValueError(f"invalid branch (p={p}, rate={rate})")
        total = sum(p for p, _ in self.branches)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"branch probabilities must sum to 1, got {total}")

    @property
    def mean(self) -> float:
        return sum(p / rate for p, rate in self.branches)

    @property
    def variance(self) -> float:
        second = sum(2.0 * p / rate**2 for p, rate in self.branches)
        return second - self.mean**2


ServiceLaw = Union[Exponential, HyperExponential]


@dataclass(frozen=True)
class JobType:
    id: int
    demand: ResourceVector
    arrival_rate: float = 0.0
    service_law: ServiceLaw = Exponential(1.0)

    def __post_init__(self):
        object.__setattr__(self, "demand", resource_vector(self.demand))
        if not any(a > 0 for a in self.demand):
            raise ValueError(f"job type {self.id} has an all-zero demand")
        if not (math.isfinite(self.arrival_rate) and self.arrival_rate >= 0):
            raise ValueError(f"arrival rate must be >= 0, got {self.arrival_rate}")

    @property
    def service_rate(self) -> float:
        return 1.0 / self.service_law.mean

    @property
    def workload(self) -> float:
        return self.arrival_rate * self.service_law.mean


@dataclass(frozen=True)
class ServerSpec:
    id: int
    capacity: ResourceVector

    def __post_init__(self):
        cap = resource_vector(self.capacity)
        if any(a <= 0 for a in cap):
            raise ValueError(f"server {self.id} capacity must be positive, got {cap}")
        object.__setattr__(self, "capacity", cap)


def weight(config: Sequence[int], queues: Sequence[int]) -> int:
    """Sum of queue length times configured count over job types."""
    if len(config) != len(queues):
        raise ValueError(f"length mismatch: config has {len(config)} types, queues {len(queues)}")
    return sum(q * k for q, k in zip(queues, config))


def load(config: Sequence[int], job_demands: Sequence[ResourceVector]) -> list[float]:
    """Total resource usage of a configuration."""
    n_res = len(job_demands[0])
    used = [0.0] * n_res
    for k, demand in zip(config, job_demands):
        if k:
            for n in range(n_res):
                used[n] += k * demand[n]
    return used


def fits(used: Sequence[float], demand: Sequence[float], capacity: Sequence[float]) -> bool:
    return all(u + d <= c + CAPACITY_SLACK for u, d, c in zip(used, demand, capacity))


def is_feasible(config: Sequence[int], server: ServerSpec, job_demands: Sequence[ResourceVector]) -> bool:
    """Additive feasibility: packed demand stays within capacity componentwise."""
    if len(config) != len(job_demands):
        raise ValueError("config and job_demands differ in length")
    if any(k < 0 for k in config):
        return False
    used = load(config, job_demands)
    return all(u <= c + CAPACITY_SLACK for u, c in zip(used, server.capacity))


def check_dimensions(servers: Sequence[ServerSpec], job_demands: Sequence[ResourceVector]) -> int:
    """Return the shared resource dimension R, raising on any mismatch."""
    dims = {len(s.capacity) for s in servers} | {len(d) for d in job_demands}
    if len(dims) != 1:
        raise ValueError(f"inconsistent resource dimensions: {sorted(dims)}")
    return dims.pop()


def max_fit(demand: Sequence[float], capacity: Sequence[float]) -> int:
    """Number of copies of ``demand`` that fit alone in ``capacity``."""
    best = None
    for d, c in zip(demand, capacity):
        if d > 0:
            n = math.floor((c + CAPACITY_SLACK) / d)
            best = n if best is None else min(best, n)
    if best is None:
        raise ValueError("all-zero demand fits unboundedly")
    return best
