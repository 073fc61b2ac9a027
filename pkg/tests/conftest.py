"""Shared helpers: small instances and a hand-driven simulation harness."""

from __future__ import annotations

import heapq
import itertools
from pathlib import Path

import pytest

from stallsched.engine import COMPLETION, Simulation, SimulationSetup
from stallsched.model import Exponential, JobType, ServerSpec, is_feasible, weight
from stallsched.processes import Poisson

SPEC_DIR = Path(__file__).resolve().parents[1] / "src" / "stallsched" / "specs"

EX1_DEMANDS = [(4.0,), (1.0,)]
EX1_SERVER = ServerSpec(0, (6.0,))


def brute_force_best(server, demands, queues):
    """Optimal weight by scanning every integer vector inside the per-type bounds."""
    bounds = []
    for d in demands:
        b = min((int(c // x) if x > 0 else 10**9) for c, x in zip(server.capacity, d))
        bounds.append(b)
    best = 0
    for k in itertools.product(*(range(b + 1) for b in bounds)):
        if is_feasible(k, server, demands):
            best = max(best, weight(k, queues))
    return best


def idle_sim(policy, capacities, demands, queues=None, check=True, seed=0, laws=None):
    """A simulation with no arrivals whose state tests drive by hand."""
    servers = [ServerSpec(i, tuple(float(c) for c in cap)) for i, cap in enumerate(capacities)]
    laws = laws or [Exponential(1.0)] * len(demands)
    jobs = [JobType(j, tuple(float(x) for x in d), 0.0, laws[j]) for j, d in enumerate(demands)]
    setup = SimulationSetup(servers, jobs, policy, Poisson(tuple(0.0 for _ in demands)), event_budget=10,
                            seed=seed, initial_queues=queues, check_invariants=check)
    return Simulation(setup)


def set_queues(sim, queues):
    """Overwrite the queue vector (keeping the balance bookkeeping consistent)."""
    for j, q in enumerate(queues):
        delta = q - sim.queues[j]
        sim.queues[j] = q
        sim.q0[j] += delta
    sim.total_queue = sum(sim.queues)


def depart(sim, server, j):
    """Complete the earliest-finishing type-j job on ``server`` right now."""
    for idx, ev in enumerate(sim._heap):
        if ev[2] == COMPLETION and ev[3] == server and ev[4] == j:
            break
    else:
        raise AssertionError(f"no type-{j} job in service at server {server}")
    ev = sim._heap.pop(idx)
    heapq.heapify(sim._heap)
    sim.now = max(sim.now, 0.0)
    # the start record holds the scheduled end time; complete at that time
    sim.now = ev[0]
    sim._complete(server, j, ev[5], ev[0])


@pytest.fixture
def spec_dir():
    return SPEC_DIR
