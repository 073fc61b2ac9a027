"""Continuous-time discrete-event simulation of a multi-server cluster."""

from __future__ import annotations

import heapq
import math
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .model import CAPACITY_SLACK, JobType, ServerSpec, check_dimensions, fits
from .policies import InvariantViolation, PolicyConfig, build_policy
from .processes import (
    ARRIVALS,
    SAMPLING,
    SERVICE,
    TOKENS,
    ArrivalLaw,
    BatchPoisson,
    Poisson,
    RenewalLogNormal,
    Stream,
    lognormal_gap,
    sample_batch,
    sample_service,
)
from .trace import TraceJobStream

# event kinds
ARRIVAL, BATCH, TRACE, COMPLETION, EXPIRY = range(5)

STREAM_FAMILIES = {"arrivals": ARRIVALS, "service": SERVICE, "sampling": SAMPLING, "tokens": TOKENS}


@dataclass
class SimulationSetup:
    servers: list[ServerSpec]
    job_types: list[JobType]
    policy: PolicyConfig
    arrivals: Union[ArrivalLaw, TraceJobStream, None] = None
    event_budget: int = 200_000
    seed: int = 0
    warmup_fraction: float = 0.25
    initial_queues: Optional[Sequence[int]] = None
    check_invariants: bool = False
    # per-family seed overrides, e.g. {"sampling": 7}
    stream_seeds: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.servers:
            raise ValueError("at least one server is required")
        if not self.job_types:
            raise ValueError("at least one job type is required")
        for j, jt in enumerate(self.job_types):
            if jt.id != j:
                raise ValueError(f"job type ids must be 0..J-1 in order, got {jt.id} at {j}")
        check_dimensions(self.servers, [jt.demand for jt in self.job_types])
        for jt in self.job_types:
            if not any(fits([0.0] * len(jt.demand), jt.demand, s.capacity) for s in self.servers):
                raise ValueError(f"job type {jt.id} fits in no server")
        if self.event_budget < 0:
            raise ValueError("event budget must be nonnegative")
        if self.event_budget == 0 and not isinstance(self.arrivals, (TraceJobStream, type(None))):
            raise ValueError("an unlimited event budget (0) is only allowed for trace replays")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if self.initial_queues is not None:
            if len(self.initial_queues) != len(self.job_types) or min(self.initial_queues) < 0:
                raise ValueError("initial_queues must hold one nonnegative count per type")
        if isinstance(self.arrivals, BatchPoisson):
            if len(self.arrivals.support[0][0]) != len(self.job_types):
                raise ValueError("batch vectors need one entry per job type")
        if isinstance(self.arrivals, TraceJobStream) and len(self.job_types) != self.arrivals.n_types:
            raise ValueError("trace type count does not match job types")
        for s in self.stream_seeds:
            if s not in STREAM_FAMILIES:
                raise ValueError(f"unknown stream family {s!r}")


class MetricsAccumulator:
    """Step-function record of the total queue, one point per processed event."""

    def __init__(self, n_types: int, n_servers: int):
        self.n_types = n_types
        self.n_servers = n_servers
        self.times = array("d")
        self.totals = array("q")
        self.stalled = array("q")
        self.in_service = array("q")
        self.resets = 0
        self.events = 0
        # per-type integrals from time zero
        self.type_integrals = [0.0] * n_types
        self._last_time = 0.0

    def record(self, now: float, total: int, stalled: int, in_service: int) -> None:
        self.times.append(now)
        self.totals.append(total)
        self.stalled.append(stalled)
        self.in_service.append(in_service)

    def integrate_types(self, now: float, queues: Sequence[int]) -> None:
        dt = now - self._last_time
        if dt > 0:
            ti = self.type_integrals
            for j, q in enumerate(queues):
                if q:
                    ti[j] += q * dt
        self._last_time = now


@dataclass
class MetricsSummary:
    mean_queue: float
    max_queue: int
    stall_fraction: float
    resets: int
    events: int
    warmup_time: float
    end_time: float
    mean_in_service: float
    quarter_means: list[float]


def _window_mean(times: np.ndarray, values: np.ndarray, lo: int, hi: int) -> float:
    """Time average of the step function between record ``lo`` and record ``hi``."""
    if hi <= lo:
        return float(values[lo])
    dt = np.diff(times[lo:hi + 1])
    span = times[hi] - times[lo]
    if span <= 0:
        return float(values[lo])
    return float(np.dot(values[lo:hi], dt) / span)


def finalize_metrics(acc: MetricsAccumulator, warmup_fraction: float = 0.25,
                     warmup_time: Optional[float] = None) -> MetricsSummary:
    """Summaries over the post-warmup window.

    The window starts at the time of event ``floor(warmup_fraction * events)``
    or, when ``warmup_time`` is given, at that simulated time.
    """
    if not 0 <= warmup_fraction < 1:
        raise ValueError("warmup fraction must lie in [0, 1)")
    times = np.frombuffer(acc.times, dtype=np.float64)
    totals = np.frombuffer(acc.totals, dtype=np.int64).astype(np.float64)
    stalled = np.frombuffer(acc.stalled, dtype=np.int64).astype(np.float64)
    in_service = np.frombuffer(acc.in_service, dtype=np.int64).astype(np.float64)
    last = len(times) - 1
    if warmup_time is None:
        start = int(math.floor(warmup_fraction * acc.events))
    else:
        start = max(0, int(np.searchsorted(times, warmup_time, side="right")) - 1)
    start = min(start, last)
    quarters = []
    for q in range(4):
        lo = int(math.floor(q * last / 4))
        hi = int(math.floor((q + 1) * last / 4))
        quarters.append(_window_mean(times, totals, lo, hi))
    return MetricsSummary(
        mean_queue=_window_mean(times, totals, start, last),
        max_queue=int(totals[start:].max()),
        stall_fraction=_window_mean(times, stalled, start, last) / acc.n_servers,
        resets=acc.resets,
        events=acc.events,
        warmup_time=float(times[start]),
        end_time=float(times[last]),
        mean_in_service=_window_mean(times, in_service, start, last),
        quarter_means=quarters,
    )


@dataclass
class RunResult:
    summary: MetricsSummary
    metrics: MetricsAccumulator
    stall_checks: dict
    stalls: int
    arrivals: list[int]
    started: list[int]
    completions: int
    samples: int
    policy: str
    per_type_mean: list[float]

    def timeseries(self, points: int = 2000) -> list[tuple[int, float, int]]:
        """Subsampled (event index, time, total queue) rows, first and last included."""
        n = len(self.metrics.times)
        stride = max(1, (n - 1) // points) if n > 1 else 1
        idx = list(range(0, n, stride))
        if idx[-1] != n - 1:
            idx.append(n - 1)
        t = self.metrics.times
        q = self.metrics.totals
        return [(i, t[i], q[i]) for i in idx]

    def total_queue_at(self, fraction: float) -> int:
        """Total queue right after event ``floor(fraction * events)``."""
        i = int(math.floor(fraction * self.metrics.events))
        return int(self.metrics.totals[min(i, len(self.metrics.totals) - 1)])


class Simulation:
    def __init__(self, setup: SimulationSetup):
        setup.validate()
        self.setup = setup
        self.servers = list(setup.servers)
        self.job_types = list(setup.job_types)
        self.check_invariants = setup.check_invariants
        J = len(self.job_types)
        L = len(self.servers)
        R = len(self.servers[0].capacity)
        seeds = {name: setup.seed for name in STREAM_FAMILIES}
        seeds.update(setup.stream_seeds)
        self.arrival_streams = [Stream(seeds["arrivals"], ARRIVALS, j) for j in range(J + 1)]
        self.service_streams = [Stream(seeds["service"], SERVICE, j) for j in range(J)]
        self.sampling_stream = Stream(seeds["sampling"], SAMPLING, 0)
        self.token_streams = [Stream(seeds["tokens"], TOKENS, j) for j in range(J)]

        self.now = 0.0
        self._seq = 0
        self._heap: list = []
        q0 = list(setup.initial_queues) if setup.initial_queues is not None else [0] * J
        self.q0 = list(q0)
        self.queues = list(q0)
        self.total_queue = sum(q0)
        self.arrived = [0] * J
        self.started = [0] * J
        self.completions = 0
        self.occupancy = [[0] * J for _ in range(L)]
        self.n_jobs = [0] * L
        self.used = [[0.0] * R for _ in range(L)]
        self.in_service = 0
        self._next_job = 0
        self._jobs: dict[int, tuple[int, int, float, float]] = {}
        self._trace = setup.arrivals if isinstance(setup.arrivals, TraceJobStream) else None
        self._waiting = [deque() for _ in range(J)] if self._trace is not None else None
        if self._waiting is not None:
            for j in range(J):
                self._waiting[j].extend([None] * q0[j])
        self.metrics = MetricsAccumulator(J, L)
        self.policy = build_policy(setup.policy, self)
        self._laws = [jt.service_law for jt in self.job_types]
        self._demands = [jt.demand for jt in self.job_types]

    # ----------------------------------------------------------------- helpers
    def _push(self, time: float, kind: int, a: int = 0, b: int = 0, c: int = 0) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, a, b, c))

    def schedule_token_expiry(self, time: float, server: int, token: int) -> None:
        self._push(time, EXPIRY, server, token)

    def dump(self) -> dict:
        return {
            "time": self.now,
            "events": self.metrics.events,
            "queues": list(self.queues),
            "occupancy": [list(o) for o in self.occupancy],
            "policy": type(self.policy).__name__,
        }

    def start_job(self, server: int, j: int) -> None:
        """Move one queued type-j job into service at ``server``."""
        if self.queues[j] <= 0:
            raise InvariantViolation(f"no type-{j} job waiting", self.dump())
        if self.check_invariants and not self.policy.admits(server):
            raise InvariantViolation(f"stalled server {server} admitted a job", self.dump())
        self.queues[j] -= 1
        self.total_queue -= 1
        self.started[j] += 1
        duration = None
        if self._waiting is not None:
            duration = self._waiting[j].popleft()
        if duration is None:
            duration = sample_service(self._laws[j], self.service_streams[j])
        self.occupancy[server][j] += 1
        self.n_jobs[server] += 1
        self.in_service += 1
        used = self.used[server]
        demand = self._demands[j]
        for n in range(len(used)):
            used[n] += demand[n]
        if self.check_invariants:
            cap = self.servers[server].capacity
            res = self.policy.reserved(server)
            for n in range(len(used)):
                extra = res[n] if res is not None else 0.0
                if used[n] + extra > cap[n] + CAPACITY_SLACK:
                    raise InvariantViolation(
                        f"server {server} over capacity on resource {n}: {used[n] + extra} > {cap[n]}",
                        self.dump())
        end = self.now + duration
        jid = self._next_job
        self._next_job += 1
        if self.check_invariants:
            self._jobs[jid] = (server, j, self.now, end)
        self._push(end, COMPLETION, server, j, jid)

    def _enqueue(self, j: int, count: int = 1, duration=None) -> None:
        self.queues[j] += count
        self.total_queue += count
        self.arrived[j] += count
        if self._waiting is not None:
            for _ in range(count):
                self._waiting[j].append(duration)

    # ------------------------------------------------------------------ arrivals
    def _schedule_arrivals(self) -> None:
        law = self.setup.arrivals
        if law is None:
            return
        if isinstance(law, Poisson):
            for j, rate in enumerate(law.rates):
                if rate > 0:
                    self._push(self.arrival_streams[j].exponential() / rate, ARRIVAL, j)
        elif isinstance(law, RenewalLogNormal):
            for j, rate in enumerate(law.rates):
                if rate > 0:
                    self._push(lognormal_gap(rate, law.sigma, self.arrival_streams[j]), ARRIVAL, j)
        elif isinstance(law, BatchPoisson):
            if law.rate > 0:
                self._push(self.arrival_streams[-1].exponential() / law.rate, BATCH)
        elif isinstance(law, TraceJobStream):
            if len(law) > 0:
                self._push(law.times[0], TRACE, 0)
        else:
            raise TypeError(f"unsupported arrival law {law!r}")

    def _next_gap(self, j: int) -> float:
        law = self.setup.arrivals
        if isinstance(law, Poisson):
            return self.arrival_streams[j].exponential() / law.rates[j]
        return lognormal_gap(law.rates[j], law.sigma, self.arrival_streams[j])

    # ----------------------------------------------------------------- main loop
    def run(self, horizon: float = math.inf) -> RunResult:
        """Process events until the budget is spent, the horizon passes or nothing is left."""
        setup = self.setup
        policy = self.policy
        metrics = self.metrics
        check = self.check_invariants
        budget = setup.event_budget if setup.event_budget > 0 else math.inf
        eta = policy.sampling_rate
        heap = self._heap

        self._schedule_arrivals()
        policy.start()
        metrics.record(0.0, self.total_queue, policy.n_stalled, self.in_service)
        if check:
            self._check_balance()
            policy.check()

        next_sample = math.inf
        sample_basis = -1
        events = 0
        law = setup.arrivals
        while events < budget:
            if eta:
                if self.total_queue != sample_basis:
                    sample_basis = self.total_queue
                    if sample_basis > 0:
                        next_sample = self.now + self.sampling_stream.exponential() / (eta * sample_basis)
                    else:
                        next_sample = math.inf
            t_heap = heap[0][0] if heap else math.inf
            if next_sample < t_heap:
                if next_sample > horizon:
                    break
                self._advance(next_sample)
                sample_basis = -1  # the sampling clock restarts after a sample
                policy.on_sample()
            else:
                if not heap or t_heap > horizon:
                    break
                time, _, kind, a, b, c = heapq.heappop(heap)
                if kind == EXPIRY:
                    self._advance(time)
                    if not policy.on_token_expiry(a, b):
                        continue
                elif kind == COMPLETION:
                    self._advance(time)
                    self._complete(a, b, c, time)
                elif kind == ARRIVAL:
                    self._advance(time)
                    self._push(time + self._next_gap(a), ARRIVAL, a)
                    self._enqueue(a)
                    policy.on_arrival(a)
                elif kind == BATCH:
                    self._advance(time)
                    self._push(time + self.arrival_streams[-1].exponential() / law.rate, BATCH)
                    vec = sample_batch(law, self.arrival_streams[-1])
                    for j, v in enumerate(vec):
                        if v:
                            self._enqueue(j, v)
                    for j, v in enumerate(vec):
                        if v:
                            policy.on_arrival(j)
                else:  # TRACE
                    self._advance(time)
                    if a + 1 < len(law):
                        self._push(law.times[a + 1], TRACE, a + 1)
                    j = law.types[a]
                    self._enqueue(j, 1, law.durations[a])
                    policy.on_arrival(j)
            events += 1
            metrics.events = events
            metrics.record(self.now, self.total_queue, policy.n_stalled, self.in_service)
            if check:
                self._check_balance()
                policy.check()

        metrics.resets = policy.resets
        metrics.integrate_types(self.now, self.queues)
        return self._result()

    def _advance(self, time: float) -> None:
        if time < self.now:
            raise InvariantViolation(f"event at {time} precedes clock {self.now}", self.dump())
        self.metrics.integrate_types(time, self.queues)
        self.now = time

    def _complete(self, server: int, j: int, jid: int, time: float) -> None:
        if self.check_invariants:
            record = self._jobs.pop(jid, None)
            if record is None or record[0] != server or record[1] != j or record[3] != time:
                raise InvariantViolation(f"job {jid} completion does not match its start record {record}",
                                         self.dump())
        occ = self.occupancy[server]
        if occ[j] <= 0:
            raise InvariantViolation(f"departure of type {j} from server {server} holding none", self.dump())
        occ[j] -= 1
        self.n_jobs[server] -= 1
        self.in_service -= 1
        self.completions += 1
        used = self.used[server]
        demand = self._demands[j]
        for n in range(len(used)):
            used[n] -= demand[n]
        self.policy.on_departure(server, j)

    def _check_balance(self) -> None:
        for j in range(len(self.queues)):
            expected = self.q0[j] + self.arrived[j] - self.started[j]
            if self.queues[j] != expected or self.queues[j] < 0:
                raise InvariantViolation(
                    f"queue {j} is {self.queues[j]} but arrivals minus departures give {expected}",
                    self.dump())

    def _result(self) -> RunResult:
        setup = self.setup
        warmup_time = None
        if self._trace is not None and len(self._trace) > 0:
            t0, t1 = self._trace.times[0], self._trace.times[-1]
            warmup_time = t0 + setup.warmup_fraction * (t1 - t0)
        summary = finalize_metrics(self.metrics, setup.warmup_fraction, warmup_time)
        elapsed = self.now if self.now > 0 else 1.0
        policy = self.policy
        return RunResult(
            summary=summary,
            metrics=self.metrics,
            stall_checks=dict(policy.stall_checks),
            stalls=getattr(policy, "stalls", 0),
            arrivals=list(self.arrived),
            started=list(self.started),
            completions=self.completions,
            samples=getattr(policy, "samples", 0),
            policy=type(policy).__name__,
            per_type_mean=[x / elapsed for x in self.metrics.type_integrals],
        )


def run(setup: SimulationSetup, horizon: Optional[float] = None) -> RunResult:
    """Run one replication. Trace replays stop at the last recorded arrival."""
    if horizon is None:
        horizon = math.inf
        if isinstance(setup.arrivals, TraceJobStream) and len(setup.arrivals) > 0:
            horizon = setup.arrivals.times[-1]
    return Simulation(setup).run(horizon)
