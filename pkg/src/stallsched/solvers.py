"""Max-weight configuration subroutines.

Three interchangeable solvers compute an r-max weight configuration for one
server given the queue vector:

* :class:`ExhaustiveSolver` scans the precomputed maximal configurations (r = 1).
* :class:`DPSolver` runs the unbounded multi-dimensional knapsack recursion
  ``G[u] = max_j G[u - w_j] + Q_j`` on a resource grid (r = 1).
* :class:`GreedySolver` fills the server with the best single job type and then
  packs the residual by relative value (r = N_f / (R (N_f + 1))).

Every solver returns a feasible nonzero configuration, also when all queues are
empty.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .model import (
    CAPACITY_SLACK,
    Configuration,
    ResourceVector,
    ServerSpec,
    check_dimensions,
    fits,
    max_fit,
)

log = logging.getLogger(__name__)

MAX_MAXIMAL_CONFIGS = 1_000_000
MAX_DP_CELLS = 2_000_000
GRID_TOLERANCE = 1e-9


class SizingError(ValueError):
    """Raised when an enumeration or DP table would be too large."""


@dataclass(frozen=True)
class SolverResult:
    config: Configuration
    ratio: float
    weight: int


@dataclass(frozen=True)
class SolverChoice:
    kind: str = "exhaustive"  # exhaustive | dp | greedy
    grid_step: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("exhaustive", "dp", "greedy"):
            raise ValueError(f"unknown solver {self.kind!r}")
        if self.grid_step is not None and any(s <= 0 for s in self.grid_step):
            raise ValueError("grid_step must be positive")


def _validate(capacity: ResourceVector, job_demands: Sequence[ResourceVector]) -> None:
    check_dimensions([ServerSpec(0, capacity)], job_demands)
    for j, demand in enumerate(job_demands):
        if not fits([0.0] * len(capacity), demand, capacity):
            raise ValueError(f"job type {j} demand {demand} does not fit in capacity {capacity}")
        if not any(d > 0 for d in demand):
            raise ValueError(f"job type {j} has an all-zero demand")


@lru_cache(maxsize=64)
def _maximal_configs(capacity: ResourceVector, job_demands: tuple[ResourceVector, ...],
                     cap: int) -> tuple[Configuration, ...]:
    n_types = len(job_demands)
    n_res = len(capacity)
    out: list[Configuration] = []
    counts = [0] * n_types
    residual = list(capacity)

    def fits_residual(demand):
        return all(demand[n] <= residual[n] + CAPACITY_SLACK for n in range(n_res))

    def rec(j: int) -> None:
        demand = job_demands[j]
        most = max_fit(demand, residual) if fits_residual(demand) else 0
        if j == n_types - 1:
            # the last type must be packed to the brim for maximality
            counts[j] = most
            for n in range(n_res):
                residual[n] -= most * demand[n]
            if not any(fits_residual(job_demands[i]) for i in range(n_types)):
                out.append(tuple(counts))
                if len(out) > cap:
                    raise SizingError(f"more than {cap} maximal configurations")
            for n in range(n_res):
                residual[n] += most * demand[n]
            counts[j] = 0
            return
        for k in range(most, -1, -1):
            counts[j] = k
            for n in range(n_res):
                residual[n] -= k * demand[n]
            rec(j + 1)
            for n in range(n_res):
                residual[n] += k * demand[n]
        counts[j] = 0

    rec(0)
    return tuple(sorted(out))


def enumerate_maximal_configs(server: ServerSpec, job_demands: Sequence[ResourceVector],
                              cap: int = MAX_MAXIMAL_CONFIGS) -> list[Configuration]:
    """All feasible configurations to which no further job fits, in lexicographic order."""
    demands = tuple(tuple(float(x) for x in d) for d in job_demands)
    _validate(server.capacity, demands)
    return list(_maximal_configs(server.capacity, demands, cap))


def _zero_queue_pick(configs: Sequence[Configuration]) -> Configuration:
    # largest total job count, lexicographically largest among ties
    return max(configs, key=lambda k: (sum(k), k))


class ExhaustiveSolver:
    """Exact max-weight search over the maximal configurations of one server."""

    ratio = 1.0

    def __init__(self, server: ServerSpec, job_demands: Sequence[ResourceVector],
                 cap: int = MAX_MAXIMAL_CONFIGS):
        configs = enumerate_maximal_configs(server, job_demands, cap)
        # descending lexicographic order: argmax returns the lexicographically largest tie
        configs.sort(reverse=True)
        self.configs = configs
        self._matrix = np.array(configs, dtype=np.int64)
        self._idle = _zero_queue_pick(configs)

    def solve(self, queues: Sequence[int]) -> SolverResult:
        q = np.asarray(queues, dtype=np.int64)
        weights = self._matrix @ q
        i = int(np.argmax(weights))
        best = int(weights[i])
        if best == 0:
            return SolverResult(self._idle, 1.0, 0)
        return SolverResult(self.configs[i], 1.0, best)


def _decimal_gcd(values: Sequence[float]) -> float:
    fracs = [Fraction(repr(v)).limit_denominator(10**9) for v in values if v > 0]
    num, den = fracs[0].numerator, fracs[0].denominator
    g = Fraction(num, den)
    for f in fracs[1:]:
        g = Fraction(math.gcd(g.numerator * f.denominator, f.numerator * g.denominator),
                     g.denominator * f.denominator)
    return float(g)


def default_grid_step(capacity: ResourceVector, job_demands: Sequence[ResourceVector]) -> tuple[float, ...]:
    """Largest step per resource that divides the capacity and every demand."""
    return tuple(
        _decimal_gcd([capacity[n]] + [d[n] for d in job_demands])
        for n in range(len(capacity))
    )


def _snap(value: float, step: float) -> int:
    units = round(value / step)
    if abs(units * step - value) > GRID_TOLERANCE * max(1.0, abs(value)):
        raise ValueError(f"value {value} is not a multiple of grid step {step}")
    return units


class DPSolver:
    """Unbounded knapsack dynamic program over a rectangular resource grid."""

    ratio = 1.0

    def __init__(self, server: ServerSpec, job_demands: Sequence[ResourceVector],
                 grid_step: Optional[Sequence[float]] = None, max_cells: int = MAX_DP_CELLS):
        demands = [tuple(float(x) for x in d) for d in job_demands]
        _validate(server.capacity, demands)
        step = tuple(grid_step) if grid_step is not None else default_grid_step(server.capacity, demands)
        if len(step) != len(server.capacity):
            raise ValueError("grid_step must have one entry per resource")
        self.grid_step = step
        self.capacity_units = tuple(_snap(c, s) for c, s in zip(server.capacity, step))
        self.demand_units = [tuple(_snap(x, s) for x, s in zip(d, step)) for d in demands]
        shape = tuple(u + 1 for u in self.capacity_units)
        n_cells = math.prod(shape)
        if n_cells > max_cells:
            raise SizingError(f"DP table of {n_cells} cells exceeds {max_cells}")
        self.n_cells = n_cells
        strides = [1] * len(shape)
        for n in range(len(shape) - 2, -1, -1):
            strides[n] = strides[n + 1] * shape[n + 1]
        self.offsets = [sum(w * s for w, s in zip(wu, strides)) for wu in self.demand_units]
        # valid[j][cell] is true when demand j can be subtracted at that cell
        coords = np.indices(shape).reshape(len(shape), -1)
        self._valid = [
            np.all(coords >= np.array(wu).reshape(-1, 1), axis=0).tolist()
            for wu in self.demand_units
        ]
        self._capacity = server.capacity
        self._demands = demands

    def solve(self, queues: Sequence[int]) -> SolverResult:
        if len(queues) != len(self.offsets):
            raise ValueError("queue vector length does not match job types")
        n_types = len(self.offsets)
        idle = not any(queues)
        if idle:
            # empty queues: most jobs in total, per the zero-queue rule
            queues = [1] * n_types
        G = [0] * self.n_cells
        choice = [-1] * self.n_cells
        active = [j for j in range(n_types) if queues[j] > 0]
        offsets = self.offsets
        valid = self._valid
        for cell in range(self.n_cells):
            best = 0
            arg = -1
            for j in active:
                if valid[j][cell]:
                    v = G[cell - offsets[j]] + queues[j]
                    if v > best:
                        best = v
                        arg = j
            G[cell] = best
            choice[cell] = arg
        counts = [0] * n_types
        cell = self.n_cells - 1
        while choice[cell] >= 0:
            j = choice[cell]
            counts[j] += 1
            cell -= offsets[j]
        total = 0 if idle else G[self.n_cells - 1]
        counts = _pad(counts, self._demands, self._capacity)
        return SolverResult(tuple(counts), 1.0, total)


def _pad(counts: list[int], demands: Sequence[ResourceVector], capacity: ResourceVector,
         order: Optional[Sequence[int]] = None) -> list[int]:
    """Fill residual capacity with as many jobs as fit, scanning types in ``order``."""
    used = [sum(k * d[n] for k, d in zip(counts, demands)) for n in range(len(capacity))]
    residual = [c - u for c, u in zip(capacity, used)]
    for j in order if order is not None else range(len(demands)):
        d = demands[j]
        if fits([0.0] * len(capacity), d, residual):
            extra = max_fit(d, residual)
            counts[j] += extra
            for n in range(len(capacity)):
                residual[n] -= extra * d[n]
    return counts


class GreedySolver:
    """Single-type greedy packing with residual fill.

    The reported ratio is the worst-case guarantee N_f / (R (N_f + 1)), where
    N_f is the smallest number of jobs of any single type that fit in the
    server, even though the residual fill usually does better.
    """

    def __init__(self, server: ServerSpec, job_demands: Sequence[ResourceVector]):
        demands = [tuple(float(x) for x in d) for d in job_demands]
        _validate(server.capacity, demands)
        self._capacity = server.capacity
        self._demands = demands
        self.alone = [max_fit(d, server.capacity) for d in demands]
        self.dominant = [max(x / c for x, c in zip(d, server.capacity)) for d in demands]
        n_f = min(self.alone)
        if n_f < 1:
            raise ValueError("some job type does not fit in the server")
        self.n_f = n_f
        self.ratio = n_f / (len(server.capacity) * (n_f + 1))

    def solve(self, queues: Sequence[int]) -> SolverResult:
        n_types = len(self._demands)
        if len(queues) != n_types:
            raise ValueError("queue vector length does not match job types")
        best = max(range(n_types), key=lambda j: (queues[j] * self.alone[j], self.alone[j], -j))
        counts = [0] * n_types
        counts[best] = self.alone[best]
        rest = sorted((j for j in range(n_types) if j != best),
                      key=lambda j: (-queues[j] / self.dominant[j], j))
        counts = _pad(counts, self._demands, self._capacity, rest)
        total = sum(q * k for q, k in zip(queues, counts))
        return SolverResult(tuple(counts), self.ratio, total)


def max_weight_exhaustive(server: ServerSpec, job_demands: Sequence[ResourceVector],
                          queues: Sequence[int]) -> SolverResult:
    return ExhaustiveSolver(server, job_demands).solve(queues)


def max_weight_dp(server: ServerSpec, job_demands: Sequence[ResourceVector], queues: Sequence[int],
                  grid_step: Optional[Sequence[float]] = None) -> SolverResult:
    return DPSolver(server, job_demands, grid_step).solve(queues)


def max_weight_greedy(server: ServerSpec, job_demands: Sequence[ResourceVector],
                      queues: Sequence[int]) -> SolverResult:
    return GreedySolver(server, job_demands).solve(queues)


class _Restricted:
    """Solve over the job types that fit the server; other types get count zero."""

    def __init__(self, inner, fitting: list[int], n_types: int):
        self.inner = inner
        self.fitting = fitting
        self.n_types = n_types
        self.ratio = inner.ratio

    def solve(self, queues: Sequence[int]) -> SolverResult:
        res = self.inner.solve([queues[j] for j in self.fitting])
        full = [0] * self.n_types
        for j, k in zip(self.fitting, res.config):
            full[j] = k
        return SolverResult(tuple(full), res.ratio, res.weight)


def _build(choice: SolverChoice, server: ServerSpec, job_demands: Sequence[ResourceVector]):
    if choice.kind == "exhaustive":
        return ExhaustiveSolver(server, job_demands)
    if choice.kind == "greedy":
        return GreedySolver(server, job_demands)
    try:
        return DPSolver(server, job_demands, choice.grid_step)
    except (SizingError, ValueError) as exc:
        if choice.grid_step is not None:
            raise
        log.warning("DP grid unusable for server %s (%s); using exhaustive search", server.capacity, exc)
        return ExhaustiveSolver(server, job_demands)


def make_solver(choice: SolverChoice, server: ServerSpec, job_demands: Sequence[ResourceVector]):
    """Solver for one server; job types that cannot fit there are never packed."""
    zero = [0.0] * len(server.capacity)
    fitting = [j for j, d in enumerate(job_demands) if fits(zero, d, server.capacity)]
    if not fitting:
        raise ValueError(f"no job type fits in server {server.id}")
    if len(fitting) == len(job_demands):
        return _build(choice, server, job_demands)
    return _Restricted(_build(choice, server, [job_demands[j] for j in fitting]), fitting, len(job_demands))
