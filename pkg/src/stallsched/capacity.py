"""Capacity region of a cluster and traffic-intensity scaling.

The region is the Minkowski sum over servers of the convex hulls of their
feasible configurations. Since feasibility is monotone the region is
down-closed, so a workload ``rho`` belongs to it iff some convex combination
of maximal configurations per server dominates ``rho`` componentwise.
Identical servers are grouped: L copies of a hull sum to L times the hull.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Sequence

import numpy as np

from .lp import maximize
from .model import ResourceVector, ServerSpec, ServiceLaw, check_dimensions, fits, max_fit
from .solvers import enumerate_maximal_configs

MEMBERSHIP_TOL = 1e-7


def _groups(servers: Sequence[ServerSpec]) -> "OrderedDict[ResourceVector, int]":
    groups: OrderedDict[ResourceVector, int] = OrderedDict()
    for s in servers:
        groups[s.capacity] = groups.get(s.capacity, 0) + 1
    return groups


def single_type_configs(server: ServerSpec, job_demands: Sequence[ResourceVector]) -> list[tuple[int, ...]]:
    """Configurations holding only one job type, packed to the brim."""
    n_types = len(job_demands)
    out = []
    for j, d in enumerate(job_demands):
        if fits([0.0] * len(d), d, server.capacity):
            k = [0] * n_types
            k[j] = max_fit(d, server.capacity)
            out.append(tuple(k))
    return out


def intensity_scale(direction: Sequence[float], servers: Sequence[ServerSpec],
                    job_demands: Sequence[ResourceVector], single_type: bool = False) -> float:
    """Largest t such that ``t * direction`` lies in the capacity region.

    With ``single_type`` the region is built from single-type configurations
    only, which gives the smaller region a greedy single-type subroutine can
    reach.
    """
    d = np.asarray(direction, dtype=float)
    if d.ndim != 1 or len(d) != len(job_demands):
        raise ValueError("direction must have one entry per job type")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("direction must be finite and nonnegative")
    if not np.any(d > 0):
        raise ValueError("direction must be nonzero")
    check_dimensions(servers, job_demands)

    columns: list[np.ndarray] = []
    group_of: list[int] = []
    counts: list[int] = []
    for capacity, count in _groups(servers).items():
        server = ServerSpec(0, capacity)
        fitting = [j for j, dem in enumerate(job_demands) if fits([0.0] * len(dem), dem, capacity)]
        if not fitting:
            continue
        sub = [job_demands[j] for j in fitting]
        local = single_type_configs(server, sub) if single_type else enumerate_maximal_configs(server, sub)
        for cfg in local:
            full = np.zeros(len(job_demands))
            full[fitting] = cfg
            columns.append(full)
            group_of.append(len(counts))
        counts.append(count)

    for j in np.nonzero(d > 0)[0]:
        if not any(col[j] > 0 for col in columns):
            raise ValueError(f"job type {j} fits in no server; no positive scale exists")

    # variables: one weight per (server group, configuration), then t
    n_vars = len(columns) + 1
    rows = []
    rhs = []
    for j in np.nonzero(d > 0)[0]:
        row = np.zeros(n_vars)
        row[:-1] = [-col[j] for col in columns]
        row[-1] = d[j]
        rows.append(row)
        rhs.append(0.0)
    for g in range(len(counts)):
        row = np.zeros(n_vars)
        for i, gi in enumerate(group_of):
            if gi == g:
                row[i] = 1.0
        rows.append(row)
        rhs.append(float(counts[g]))
    c = np.zeros(n_vars)
    c[-1] = 1.0
    value, _ = maximize(c, np.array(rows), np.array(rhs))
    return value


def region_membership(rho: Sequence[float], servers: Sequence[ServerSpec],
                      job_demands: Sequence[ResourceVector], tol: float = MEMBERSHIP_TOL) -> bool:
    """True iff the workload ``rho`` lies in the capacity region."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise ValueError("workload must be nonnegative")
    if not np.any(r > 0):
        return True
    try:
        t = intensity_scale(r, servers, job_demands)
    except ValueError:
        return False
    return t >= 1.0 - tol


def workload_for_intensity(zeta: float, direction: Sequence[float], servers: Sequence[ServerSpec],
                           job_demands: Sequence[ResourceVector],
                           service_laws: Sequence[ServiceLaw]) -> list[float]:
    """Arrival rates placing the workload on the boundary of ``zeta`` times the region."""
    if not 0 < zeta < 1:
        raise ValueError(f"traffic intensity must lie in (0, 1), got {zeta}")
    t_star = intensity_scale(direction, servers, job_demands)
    return [zeta * t_star * dj / law.mean for dj, law in zip(direction, service_laws)]
