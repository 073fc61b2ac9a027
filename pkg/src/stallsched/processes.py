"""Random streams, service-time laws and arrival processes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .model import Exponential, HyperExponential, ServiceLaw

_BLOCK = 4096

# stream families; each stream is seeded from (seed, family, index)
ARRIVALS, SERVICE, SAMPLING, TOKENS = range(4)


class Stream:
    """Buffered draws from one PCG64 generator.

    Draws are taken in fixed-size blocks so a given call sequence always
    yields the same numbers for a given seed.
    """

    def __init__(self, seed: int, family: int, index: int = 0):
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, family, index])))
        self._exp: list[float] = []
        self._uni: list[float] = []
        self._norm: list[float] = []

    def exponential(self) -> float:
        """Standard exponential draw (mean 1)."""
        if not self._exp:
            self._exp = self.rng.standard_exponential(_BLOCK).tolist()[::-1]
        return self._exp.pop()

    def uniform(self) -> float:
        if not self._uni:
            self._uni = self.rng.random(_BLOCK).tolist()[::-1]
        return self._uni.pop()

    def normal(self) -> float:
        if not self._norm:
            self._norm = self.rng.standard_normal(_BLOCK).tolist()[::-1]
        return self._norm.pop()


def sample_service(law: ServiceLaw, stream: Stream) -> float:
    if isinstance(law, Exponential):
        return stream.exponential() / law.rate
    u = stream.uniform()
    acc = 0.0
    for p, rate in law.branches:
        acc += p
        if u < acc:
            return stream.exponential() / rate
    return stream.exponential() / law.branches[-1][1]


@dataclass(frozen=True)
class Poisson:
    rates: tuple[float, ...]


@dataclass(frozen=True)
class RenewalLogNormal:
    """Per-type renewal streams with log-normal gaps of mean 1/rate."""

    rates: tuple[float, ...]
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("log-normal sigma must be positive")


@dataclass(frozen=True)
class BatchPoisson:
    rate: float
    support: tuple[tuple[tuple[int, ...], float], ...]  # (job vector, probability)

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("batch rate must be nonnegative")
        if not self.support:
            raise ValueError("batch support is empty")
        total = sum(p for _, p in self.support)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"batch probabilities must sum to 1, got {total}")
        for v, p in self.support:
            if p < 0 or any(x < 0 for x in v) or not any(v):
                raise ValueError(f"invalid batch entry {v}: {p}")

    def type_rates(self) -> list[float]:
        """Long-run arrival rate of each job type."""
        n = len(self.support[0][0])
        return [self.rate * sum(v[j] * p for v, p in self.support) for j in range(n)]


ArrivalLaw = Union[Poisson, RenewalLogNormal, BatchPoisson]


def sample_batch(law: BatchPoisson, stream: Stream) -> tuple[int, ...]:
    u = stream.uniform()
    acc = 0.0
    for v, p in law.support:
        acc += p
        if u < acc:
            return v
    return law.support[-1][0]


def lognormal_gap(rate: float, sigma: float, stream: Stream) -> float:
    # log-scale chosen so the mean gap is 1/rate
    mu = -math.log(rate) - 0.5 * sigma * sigma
    return math.exp(mu + sigma * stream.normal())


def batch_workload(law: BatchPoisson, service_laws: Sequence[ServiceLaw]) -> list[float]:
    """Offered workload per type: batch rate times mean batch content times mean service."""
    return [r * s.mean for r, s in zip(law.type_rates(), service_laws)]


def hyperexp_variance(law: HyperExponential) -> float:
    """Variance written as squared mean plus pairwise spread of branch means."""
    means = [1.0 / rate for _, rate in law.branches]
    probs = [p for p, _ in law.branches]
    spread = sum(pi * pj * (mi - mj) ** 2 for pi, mi in zip(probs, means) for pj, mj in zip(probs, means))
    return law.mean ** 2 + spread
