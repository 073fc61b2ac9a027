"""Scheduling policies driven by the simulation engine.

``Alg1Policy`` is the stall-based scheduler: an active server keeps a fixed
target configuration, backfills departures and reserves empty slots; at a
departure it stalls when its configuration's weight drops below beta times
the weight of a fresh r-max weight configuration, and it restarts with a new
configuration once it drains (or, with early reactivation, once its remaining
jobs fit inside the new configuration).

``M14Policy`` is MaxWeight at local refresh times: the configuration is only
recomputed when a server becomes empty.

``G16Policy`` is randomized token sampling: queued jobs trigger sampling
events that place resource tokens on random servers.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Union

from .model import CAPACITY_SLACK
from .solvers import SolverChoice, make_solver


class InvariantViolation(RuntimeError):
    """A runtime invariant of the simulation was broken."""

    def __init__(self, message: str, state: Optional[dict] = None):
        super().__init__(message)
        self.state = state or {}


@dataclass(frozen=True)
class ConstantBeta:
    beta: float = 0.9

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    def __call__(self, total_queue: int) -> float:
        return self.beta


@dataclass(frozen=True)
class SigmoidBeta:
    """beta_bar * (p + (1 - p) * tanh(z * total_queue))."""

    beta_bar: float = 0.9
    p: float = -0.05
    z: float = 0.005

    def __post_init__(self):
        if not 0 < self.beta_bar < 1:
            raise ValueError(f"beta_bar must lie in (0, 1), got {self.beta_bar}")
        if self.p > 1:
            raise ValueError(f"p must be <= 1, got {self.p}")
        if self.z <= 0:
            raise ValueError(f"z must be positive, got {self.z}")

    def __call__(self, total_queue: int) -> float:
        return self.beta_bar * (self.p + (1.0 - self.p) * math.tanh(self.z * total_queue))


BetaPolicy = Union[ConstantBeta, SigmoidBeta]


@dataclass(frozen=True)
class StallGate:
    """Multiplier on beta as a function of the stalled fraction s.

    ``none``: 1; ``hard``: 1 if s < threshold else 0;
    ``linear``: (1 - s) if s < threshold else 0.
    """

    kind: str = "none"
    threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "hard", "linear"):
            raise ValueError(f"unknown stall gate {self.kind!r}")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"gate threshold must lie in (0, 1], got {self.threshold}")

    def __call__(self, s: float) -> float:
        if self.kind == "none":
            return 1.0
        if s >= self.threshold:
            return 0.0
        return 1.0 if self.kind == "hard" else 1.0 - s


@dataclass(frozen=True)
class Alg1:
    solver: SolverChoice = field(default_factory=SolverChoice)
    beta: BetaPolicy = field(default_factory=SigmoidBeta)
    early_reactivation: bool = True
    gate: StallGate = field(default_factory=lambda: StallGate("linear", 0.1))
    # an empty server may adopt a fresh configuration when an arrival finds no slot
    idle_reconfigure: bool = True
    name = "alg1"


@dataclass(frozen=True)
class M14:
    solver: SolverChoice = field(default_factory=SolverChoice)
    idle_reconfigure: bool = True
    name = "m14"


@dataclass(frozen=True)
class G16:
    eta: float = 1.0
    # mean token lifetime per type; None means the type's mean service time
    token_lifetime: Optional[tuple[float, ...]] = None
    name = "g16"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("sampling rate eta must be positive")
        if self.token_lifetime is not None and any(x <= 0 for x in self.token_lifetime):
            raise ValueError("token lifetimes must be positive")


PolicyConfig = Union[Alg1, M14, G16]


def build_policy(config: PolicyConfig, sim) -> "Policy":
    if isinstance(config, Alg1):
        return Alg1Policy(config, sim)
    if isinstance(config, M14):
        return M14Policy(config, sim)
    if isinstance(config, G16):
        return G16Policy(config, sim)
    raise TypeError(f"unknown policy config {config!r}")


class Policy:
    sampling_rate = 0.0  # per queued job; nonzero only for G16

    def __init__(self, sim):
        self.sim = sim
        self.n_servers = len(sim.servers)
        self.n_types = len(sim.job_types)
        self.n_stalled = 0
        self.resets = 0
        self.stall_checks = {"departure": 0, "arrival": 0}

    def start(self) -> None:
        """Initial decisions at time zero."""

    def on_arrival(self, j: int) -> None:
        raise NotImplementedError

    def on_departure(self, server: int, j: int) -> None:
        raise NotImplementedError

    def on_sample(self) -> None:
        pass

    def on_token_expiry(self, server: int, token: int) -> bool:
        return False

    def admits(self, server: int) -> bool:
        return True

    def reserved(self, server: int):
        return None

    def check(self) -> None:
        """Cheap global consistency checks, run after every event when enabled."""


class _SlotPolicy(Policy):
    """Shared empty-slot bookkeeping for the configuration-based policies."""

    def __init__(self, config, sim):
        super().__init__(sim)
        demands = [jt.demand for jt in sim.job_types]
        solvers = {}
        classes: dict = {}
        self.solvers = []
        self._class_of = []
        for s in sim.servers:
            if s.capacity not in solvers:
                solvers[s.capacity] = make_solver(config.solver, s, demands)
                classes[s.capacity] = len(classes)
            self.solvers.append(solvers[s.capacity])
            self._class_of.append(classes[s.capacity])
        self.idle_reconfigure = config.idle_reconfigure
        # lowest-id empty server per capacity class, lazily pruned
        self._idle: list[list[int]] = [[] for _ in classes]
        self._in_idle = [False] * len(sim.servers)
        n, J = self.n_servers, self.n_types
        self.active = [True] * n
        self.target = [[0] * J for _ in range(n)]
        self.slots = [[0] * J for _ in range(n)]
        self.slot_total = [0] * J
        self._heaps: list[list[int]] = [[] for _ in range(J)]
        self._in_heap = [[False] * J for _ in range(n)]

    def _add_slots(self, server: int, j: int, n: int = 1) -> None:
        self.slots[server][j] += n
        self.slot_total[j] += n
        if not self._in_heap[server][j]:
            self._in_heap[server][j] = True
            heapq.heappush(self._heaps[j], server)

    def _first_slot(self, j: int) -> Optional[int]:
        heap = self._heaps[j]
        slots = self.slots
        while heap:
            server = heap[0]
            if slots[server][j] > 0:
                return server
            heapq.heappop(heap)
            self._in_heap[server][j] = False
        return None

    def _clear_slots(self, server: int) -> None:
        row = self.slots[server]
        for j in range(self.n_types):
            if row[j]:
                self.slot_total[j] -= row[j]
                row[j] = 0

    def _fill(self, server: int, config) -> None:
        """Adopt ``config`` as target, start queued jobs and reserve the rest."""
        sim = self.sim
        queues = sim.queues
        occ = sim.occupancy[server]
        self.target[server] = list(config)
        for j in range(self.n_types):
            free = config[j] - occ[j]
            if free < 0:
                raise InvariantViolation(
                    f"server {server}: occupancy {occ} exceeds target {list(config)}", sim.dump())
            n = min(free, queues[j])
            for _ in range(n):
                sim.start_job(server, j)
            if free > n:
                self._add_slots(server, j, free - n)

    def on_arrival(self, j: int) -> None:
        sim = self.sim
        queues = sim.queues
        while queues[j] > 0:
            server = self._first_slot(j)
            if server is None:
                break
            self.slots[server][j] -= 1
            self.slot_total[j] -= 1
            sim.start_job(server, j)
        if queues[j] > 0 and self.idle_reconfigure:
            self._reconfigure_idle(j)

    def _mark_idle(self, server: int) -> None:
        if not self._in_idle[server]:
            self._in_idle[server] = True
            heapq.heappush(self._idle[self._class_of[server]], server)

    def _lowest_idle(self, cls: int) -> Optional[int]:
        heap = self._idle[cls]
        n_jobs = self.sim.n_jobs
        while heap:
            server = heap[0]
            if n_jobs[server] == 0 and self.active[server]:
                return server
            heapq.heappop(heap)
            self._in_idle[server] = False
        return None

    def _reconfigure_idle(self, j: int) -> None:
        """Give empty servers a fresh configuration so waiting type-j jobs can start.

        An empty server preempts nothing when it changes configuration, so it
        is treated as being at a refresh time.
        """
        queues = self.sim.queues
        for cls in range(len(self._idle)):
            while queues[j] > 0:
                server = self._lowest_idle(cls)
                if server is None:
                    break
                fresh = self.solvers[server].solve(queues).config
                if fresh[j] == 0:
                    break
                self._clear_slots(server)
                self.resets += 1
                self._fill(server, fresh)
            if queues[j] == 0:
                return

    def admits(self, server: int) -> bool:
        return self.active[server]

    def start(self) -> None:
        queues = self.sim.queues
        for server in range(self.n_servers):
            self._fill(server, self.solvers[server].solve(queues).config)
            if self.sim.n_jobs[server] == 0:
                self._mark_idle(server)

    def check(self) -> None:
        queues = self.sim.queues
        for j in range(self.n_types):
            if self.slot_total[j] > 0 and queues[j] > 0:
                raise InvariantViolation(
                    f"type {j} has {self.slot_total[j]} empty slots while {queues[j]} jobs wait",
                    self.sim.dump())

    def _check_server(self, server: int) -> None:
        if self.active[server]:
            occ = self.sim.occupancy[server]
            tgt = self.target[server]
            if any(o > t for o, t in zip(occ, tgt)):
                raise InvariantViolation(
                    f"active server {server} holds {occ} beyond target {tgt}", self.sim.dump())


class Alg1Policy(_SlotPolicy):
    name = "alg1"

    def __init__(self, config: Alg1, sim):
        super().__init__(config, sim)
        self.beta = config.beta
        self.gate = config.gate
        self.early = config.early_reactivation
        self.stalls = 0
        self._in_departure = False

    def _stall_condition(self, server: int):
        """Evaluate the stall test; returns (stall, fresh configuration or None)."""
        if not self._in_departure:
            self.stall_checks["arrival"] += 1
            raise InvariantViolation("stall condition evaluated outside a departure", self.sim.dump())
        self.stall_checks["departure"] += 1
        queues = self.sim.queues
        beta = self.beta(self.sim.total_queue) * self.gate(self.n_stalled / self.n_servers)
        if beta <= 0:
            return False, None
        best = self.solvers[server].solve(queues)
        current = sum(q * k for q, k in zip(queues, self.target[server]))
        return current < beta * best.weight, best.config

    def on_departure(self, server: int, j: int) -> None:
        sim = self.sim
        fresh = None
        if self.active[server]:
            self._in_departure = True
            try:
                stall, fresh = self._stall_condition(server)
            finally:
                self._in_departure = False
            if stall:
                self.active[server] = False
                self._clear_slots(server)
                self.n_stalled += 1
                self.stalls += 1
                if sim.check_invariants and self.gate.kind != "none":
                    bound = math.ceil(self.gate.threshold * self.n_servers) + 1
                    if self.n_stalled > bound:
                        raise InvariantViolation(
                            f"{self.n_stalled} stalled servers exceed gate bound {bound}", sim.dump())
            elif sim.queues[j] > 0:
                sim.start_job(server, j)
            else:
                self._add_slots(server, j)
        if not self.active[server]:
            if sim.n_jobs[server] == 0:
                self._reactivate(server, fresh)
            elif self.early:
                if fresh is None:
                    fresh = self.solvers[server].solve(sim.queues).config
                occ = sim.occupancy[server]
                if all(o <= k for o, k in zip(occ, fresh)):
                    self._reactivate(server, fresh)
        if sim.n_jobs[server] == 0:
            self._mark_idle(server)
        if sim.check_invariants:
            self._check_server(server)

    def _reactivate(self, server: int, config) -> None:
        if config is None:
            config = self.solvers[server].solve(self.sim.queues).config
        self.active[server] = True
        self.n_stalled -= 1
        self.resets += 1
        self._fill(server, config)


class M14Policy(_SlotPolicy):
    name = "m14"

    def on_departure(self, server: int, j: int) -> None:
        sim = self.sim
        if sim.queues[j] > 0:
            sim.start_job(server, j)
        else:
            self._add_slots(server, j)
        if sim.n_jobs[server] == 0:
            # local refresh time
            self._clear_slots(server)
            self.resets += 1
            self._fill(server, self.solvers[server].solve(sim.queues).config)
        if sim.n_jobs[server] == 0:
            self._mark_idle(server)
        if sim.check_invariants:
            self._check_server(server)


class G16Policy(Policy):
    name = "g16"

    def __init__(self, config: G16, sim):
        super().__init__(sim)
        self.sampling_rate = config.eta
        if config.token_lifetime is not None:
            if len(config.token_lifetime) != self.n_types:
                raise ValueError("token_lifetime needs one entry per job type")
            self.lifetime = list(config.token_lifetime)
        else:
            self.lifetime = [jt.service_law.mean for jt in sim.job_types]
        n, J = self.n_servers, self.n_types
        R = len(sim.servers[0].capacity)
        self._reserved = [[0.0] * R for _ in range(n)]
        self.tokens = [[[] for _ in range(J)] for _ in range(n)]  # token ids, oldest first
        self.token_total = [0] * J
        self._alive: dict[int, tuple[int, int]] = {}
        self._next_token = 0
        self._heaps: list[list[int]] = [[] for _ in range(J)]
        self._in_heap = [[False] * J for _ in range(n)]
        self.samples = 0
        self.placements = 0

    def reserved(self, server: int):
        return self._reserved[server]

    def _first_token(self, j: int) -> Optional[int]:
        heap = self._heaps[j]
        while heap:
            server = heap[0]
            if self.tokens[server][j]:
                return server
            heapq.heappop(heap)
            self._in_heap[server][j] = False
        return None

    def _place_token(self, server: int, j: int) -> None:
        sim = self.sim
        tid = self._next_token
        self._next_token += 1
        self.tokens[server][j].append(tid)
        self.token_total[j] += 1
        self._alive[tid] = (server, j)
        res = self._reserved[server]
        for n, d in enumerate(sim.job_types[j].demand):
            res[n] += d
        if not self._in_heap[server][j]:
            self._in_heap[server][j] = True
            heapq.heappush(self._heaps[j], server)
        life = sim.token_streams[j].exponential() * self.lifetime[j]
        sim.schedule_token_expiry(sim.now + life, server, tid)

    def _release(self, server: int, j: int, tid: int) -> None:
        self.tokens[server][j].remove(tid)
        self.token_total[j] -= 1
        del self._alive[tid]
        res = self._reserved[server]
        for n, d in enumerate(self.sim.job_types[j].demand):
            res[n] -= d

    def on_arrival(self, j: int) -> None:
        sim = self.sim
        queues = sim.queues
        while queues[j] > 0:
            server = self._first_token(j)
            if server is None:
                return
            self._release(server, j, self.tokens[server][j][0])
            sim.start_job(server, j)

    def on_departure(self, server: int, j: int) -> None:
        # the freed slot is kept as a type-j token unless a type-j job is waiting
        if self.sim.queues[j] > 0:
            self.sim.start_job(server, j)
        else:
            self._place_token(server, j)

    def on_sample(self) -> None:
        sim = self.sim
        queues = sim.queues
        self.samples += 1
        u = sim.sampling_stream.uniform() * sim.total_queue
        j = 0
        acc = queues[0]
        while acc <= u and j < self.n_types - 1:
            j += 1
            acc += queues[j]
        server = min(int(sim.sampling_stream.uniform() * self.n_servers), self.n_servers - 1)
        used = sim.used[server]
        res = self._reserved[server]
        cap = sim.servers[server].capacity
        demand = sim.job_types[j].demand
        for n in range(len(cap)):
            if used[n] + res[n] + demand[n] > cap[n] + CAPACITY_SLACK:
                return
        # a waiting job takes the new token at once
        self.placements += 1
        sim.start_job(server, j)

    def on_token_expiry(self, server: int, token: int) -> bool:
        info = self._alive.get(token)
        if info is None:
            return False
        self._release(info[0], info[1], token)
        return True

    def check(self) -> None:
        queues = self.sim.queues
        for j in range(self.n_types):
            if self.token_total[j] > 0 and queues[j] > 0:
                raise InvariantViolation(
                    f"type {j} has {self.token_total[j]} idle tokens while {queues[j]} jobs wait",
                    self.sim.dump())
