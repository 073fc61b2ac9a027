import pytest

from stallsched.engine import SimulationSetup, run
from stallsched.model import Exponential, JobType, ServerSpec
from stallsched.policies import (G16, M14, Alg1, ConstantBeta, InvariantViolation, SigmoidBeta, StallGate)
from stallsched.processes import Poisson
from stallsched.solvers import SolverChoice

from conftest import EX1_DEMANDS, depart, idle_sim, set_queues

PLAIN = dict(beta=ConstantBeta(0.9), gate=StallGate("none"), early_reactivation=False)


def configure(sim, server, target, occupancy):
    """Give ``server`` the target configuration with ``occupancy`` jobs in service."""
    p = sim.policy
    set_queues(sim, occupancy)
    p._clear_slots(server)
    p._fill(server, target)
    assert sim.occupancy[server] == list(occupancy)
    assert sum(sim.queues) == 0


def started_sim(policy, capacities=((6,),), demands=EX1_DEMANDS, **kw):
    sim = idle_sim(policy, capacities, demands, **kw)
    sim.policy.start()
    return sim


# ------------------------------------------------------------------ arrivals


def test_arrival_fills_an_empty_slot():
    sim = started_sim(Alg1(**PLAIN))
    configure(sim, 0, (1, 2), (1, 1))
    assert sim.policy.slots[0] == [0, 1]
    sim._enqueue(1)
    sim.policy.on_arrival(1)
    assert sim.occupancy[0] == [1, 2]
    assert sim.queues == [0, 0]


def test_arrival_without_a_slot_waits():
    sim = started_sim(Alg1(**PLAIN, idle_reconfigure=False))
    configure(sim, 0, (1, 2), (1, 2))
    sim._enqueue(1)
    sim.policy.on_arrival(1)
    assert sim.queues == [0, 1]


def test_lowest_server_id_wins():
    sim = started_sim(Alg1(**PLAIN), capacities=((6,), (6,)))
    configure(sim, 1, (1, 2), (1, 1))
    configure(sim, 0, (1, 2), (1, 1))
    sim._enqueue(1)
    sim.policy.on_arrival(1)
    assert sim.occupancy[0] == [1, 2] and sim.occupancy[1] == [1, 1]


def test_empty_server_reconfigures_for_an_unserved_type():
    sim = started_sim(Alg1(**PLAIN))
    assert sim.policy.target[0] == [0, 6]  # zero-queue pick
    sim._enqueue(0)
    sim.policy.on_arrival(0)
    assert sim.policy.target[0] == [1, 2]
    assert sim.occupancy[0] == [1, 0]
    assert sim.policy.stall_checks["arrival"] == 0

    frozen = started_sim(Alg1(**PLAIN, idle_reconfigure=False))
    frozen._enqueue(0)
    frozen.policy.on_arrival(0)
    assert frozen.queues == [1, 0]


# ---------------------------------------------------------------- departures


def test_example1_departure_stalls():
    # weight((1,2), (0,10)) = 20 < 0.9 * weight((0,6), (0,10)) = 54
    sim = started_sim(Alg1(**PLAIN))
    configure(sim, 0, (1, 2), (1, 2))
    set_queues(sim, (0, 10))
    depart(sim, 0, 1)
    p = sim.policy
    assert not p.active[0] and p.n_stalled == 1 and p.stalls == 1
    assert sim.occupancy[0] == [1, 1]
    assert sim.queues == [0, 10]  # no backfill into a stalled server
    assert p.stall_checks == {"departure": 1, "arrival": 0}
    # it drains and restarts with (0, 6)
    depart(sim, 0, 1)
    depart(sim, 0, 0)
    assert p.active[0] and p.n_stalled == 0 and p.resets == 1
    assert p.target[0] == [0, 6] and sim.occupancy[0] == [0, 6]
    assert sim.queues == [0, 4]


def test_example1_departure_backfills():
    # weight((1,2), (10,1)) = 12 >= 0.9 * 12: stay active and refill the freed slot
    sim = started_sim(Alg1(**PLAIN))
    configure(sim, 0, (1, 2), (1, 2))
    set_queues(sim, (10, 1))
    depart(sim, 0, 1)
    assert sim.policy.active[0]
    assert sim.occupancy[0] == [1, 2] and sim.queues == [10, 0]


def test_departure_without_queued_job_leaves_a_slot():
    sim = started_sim(Alg1(**PLAIN))
    configure(sim, 0, (1, 2), (1, 2))
    depart(sim, 0, 1)
    assert sim.policy.slots[0] == [0, 1]
    sim.policy.check()


def test_negative_effective_beta_never_stalls():
    beta = SigmoidBeta(0.9, -0.05, 0.005)
    assert beta(1) < 0
    sim = started_sim(Alg1(beta=beta, gate=StallGate("none"), early_reactivation=False))
    configure(sim, 0, (1, 2), (1, 2))
    set_queues(sim, (0, 1))
    depart(sim, 0, 1)
    assert sim.policy.active[0] and sim.policy.stalls == 0


def test_early_reactivation_keeps_remaining_jobs():
    sim = started_sim(Alg1(beta=ConstantBeta(0.9), gate=StallGate("none"), early_reactivation=True))
    configure(sim, 0, (1, 2), (1, 2))
    set_queues(sim, (0, 10))
    depart(sim, 0, 0)  # stall; remaining (0, 2) fits inside (0, 6)
    p = sim.policy
    assert p.active[0] and p.stalls == 1 and p.resets == 1
    assert p.target[0] == [0, 6]
    # work conservation: min(6 - 2, 10) = 4 jobs moved from the queue
    assert sim.occupancy[0] == [0, 6] and sim.queues == [0, 6]


def test_reactivation_schedules_and_reserves():
    sim = started_sim(Alg1(**PLAIN))
    p = sim.policy
    p._clear_slots(0)
    p.active[0] = False
    p.n_stalled = 1
    set_queues(sim, (5, 0))
    p._reactivate(0, None)
    assert p.target[0] == [1, 2]
    assert sim.occupancy[0] == [1, 0] and p.slots[0] == [0, 2]
    assert sim.queues == [4, 0]


def test_stall_gate_shapes():
    hard, linear = StallGate("hard", 0.1), StallGate("linear", 0.1)
    assert hard(0.0) == linear(0.0) == StallGate("none")(0.9) == 1.0
    assert hard(0.05) == 1.0 and linear(0.05) == pytest.approx(0.95)
    assert hard(0.1) == linear(0.1) == 0.0
    with pytest.raises(ValueError):
        StallGate("soft")
    with pytest.raises(ValueError):
        StallGate("hard", 0.0)


def test_sigmoid_range():
    b = SigmoidBeta(0.9, -0.05, 0.005)
    assert b(0) == pytest.approx(0.9 * -0.05)
    assert b(10**6) == pytest.approx(0.9)
    assert all(b(q) < 0.9 for q in range(0, 2000, 50))
    with pytest.raises(ValueError):
        SigmoidBeta(1.0)
    with pytest.raises(ValueError):
        ConstantBeta(0.0)


def test_stall_test_outside_a_departure_is_an_invariant_violation():
    sim = started_sim(Alg1(**PLAIN))
    with pytest.raises(InvariantViolation):
        sim.policy._stall_condition(0)


def test_departure_from_an_empty_server_aborts():
    sim = started_sim(Alg1(**PLAIN), check=False)
    with pytest.raises(InvariantViolation):
        sim._complete(0, 1, 0, 1.0)


# ---------------------------------------------------------------------- M14


def test_m14_keeps_configuration_while_busy():
    sim = started_sim(M14())
    configure(sim, 0, (1, 2), (1, 2))
    set_queues(sim, (0, 10))
    depart(sim, 0, 1)
    assert sim.policy.target[0] == [1, 2] and sim.occupancy[0] == [1, 2]
    assert sim.policy.resets == 0


def test_m14_refreshes_when_empty():
    sim = started_sim(M14())
    configure(sim, 0, (1, 2), (1, 0))
    set_queues(sim, (0, 10))
    depart(sim, 0, 0)
    assert sim.policy.resets == 1
    assert sim.policy.target[0] == [0, 6] and sim.occupancy[0] == [0, 6]


def test_m14_arrival_handling_matches_alg1():
    # from identical states, a sequence of arrivals lands in the same slots
    sims = [started_sim(M14(), capacities=((6,), (6,), (6,))),
            started_sim(Alg1(**PLAIN), capacities=((6,), (6,), (6,)))]
    for sim in sims:
        configure(sim, 2, (1, 2), (0, 0))
        configure(sim, 1, (0, 6), (0, 3))
        configure(sim, 0, (1, 2), (1, 2))
    for j in (1, 0, 1, 1, 1, 0, 1, 1):
        for sim in sims:
            sim._enqueue(j)
            sim.policy.on_arrival(j)
    assert sims[0].occupancy == sims[1].occupancy
    assert sims[0].queues == sims[1].queues
    assert sims[0].policy.slots == sims[1].policy.slots


# ---------------------------------------------------------------------- G16


def test_g16_departure_leaves_a_token_consumed_by_the_next_arrival():
    sim = started_sim(G16(), capacities=((6,), (6,)))
    p = sim.policy
    set_queues(sim, (0, 1))
    sim.start_job(1, 1)
    depart(sim, 1, 1)
    assert p.token_total == [0, 1] and p.tokens[1][1]
    assert sim.policy.reserved(1) == [1.0]
    sim._enqueue(1)
    p.on_arrival(1)
    assert p.token_total == [0, 0] and sim.occupancy[1] == [0, 1]


def test_g16_token_expiry_releases_the_reservation():
    sim = started_sim(G16())
    p = sim.policy
    set_queues(sim, (1, 0))
    sim.start_job(0, 0)
    depart(sim, 0, 0)
    tid = p.tokens[0][0][0]
    assert p.on_token_expiry(0, tid)
    assert p.reserved(0) == [0.0] and p.token_total == [0, 0]
    assert not p.on_token_expiry(0, tid)  # already gone


def test_g16_sampling_rate_tracks_the_queue():
    # one unit server, one effectively endless job: after the first placement the
    # queue stays at 49 and samples arrive at rate eta * 49
    eta = 0.5
    jobs = [JobType(0, (1.0,), 0.0, Exponential(1e-12))]
    setup = SimulationSetup([ServerSpec(0, (1.0,))], jobs, G16(eta=eta), Poisson((0.0,)), event_budget=40000,
                            seed=9, initial_queues=(50,))
    r = run(setup)
    assert r.summary.max_queue == 49 or r.metrics.totals[1] == 49
    t = list(r.metrics.times)
    n = r.samples - 1
    rate = n / (t[-1] - t[1])
    assert rate == pytest.approx(eta * 49, rel=0.02)


def test_g16_sample_that_cannot_fit_is_a_no_op():
    sim = started_sim(G16(), capacities=((1,),), demands=[(1.0,)])
    set_queues(sim, (3,))
    sim.start_job(0, 0)
    before = list(sim.queues)
    sim.policy.on_sample()
    assert sim.queues == before and sim.policy.placements == 0


def test_g16_parameter_validation():
    with pytest.raises(ValueError):
        G16(eta=0.0)
    with pytest.raises(ValueError):
        G16(token_lifetime=(1.0, -1.0))


def test_solver_choice_is_used_by_policies():
    sim = started_sim(Alg1(solver=SolverChoice("greedy"), **PLAIN))
    assert type(sim.policy.solvers[0]).__name__ in ("GreedySolver", "_Restricted")
