import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stallsched.model import ServerSpec, is_feasible, weight
from stallsched.solvers import (DPSolver, ExhaustiveSolver, GreedySolver, SolverChoice, SizingError,
                                default_grid_step, enumerate_maximal_configs, make_solver,
                                max_weight_dp, max_weight_exhaustive, max_weight_greedy)

from conftest import EX1_DEMANDS, EX1_SERVER, brute_force_best


def test_example1_maximal_configs():
    assert enumerate_maximal_configs(EX1_SERVER, EX1_DEMANDS) == [(0, 6), (1, 2)]


def test_example1_max_weight_choices():
    # Q = (0, 10): the all-small configuration wins with weight 60
    assert max_weight_exhaustive(EX1_SERVER, EX1_DEMANDS, (0, 10)).config == (0, 6)
    assert max_weight_exhaustive(EX1_SERVER, EX1_DEMANDS, (0, 10)).weight == 60
    # Q = (10, 1): 1*10 + 2*1 = 12 beats 6*1 = 6
    r = max_weight_exhaustive(EX1_SERVER, EX1_DEMANDS, (10, 1))
    assert (r.config, r.weight) == ((1, 2), 12)
    assert max_weight_dp(EX1_SERVER, EX1_DEMANDS, (10, 1)).config == (1, 2)


def test_zero_queues_pick_a_nonzero_maximal_config():
    # with every queue empty the most jobs are packed, ties broken lexicographically
    for solve in (max_weight_exhaustive, max_weight_dp):
        r = solve(EX1_SERVER, EX1_DEMANDS, (0, 0))
        assert r.config == (0, 6)
        assert r.weight == 0
    r = max_weight_exhaustive(ServerSpec(0, (2.0,)), [(1.0,), (1.0,)], (0, 0))
    assert r.config == (2, 0)


def test_dp_grid_step_is_the_decimal_gcd():
    assert default_grid_step((6.0,), EX1_DEMANDS) == (1.0,)
    assert default_grid_step((1.0,), [(0.25,), (0.5,)]) == (0.25,)
    step = default_grid_step((90.0, 90.0, 5000.0), [(15.0, 8.0, 1690.0), (17.1, 6.5, 420.0), (7.0, 20.0, 1690.0)])
    assert step == pytest.approx((0.1, 0.5, 10.0))


def test_dp_rejects_an_oversized_grid():
    with pytest.raises(SizingError):
        DPSolver(ServerSpec(0, (1.0, 1.0)), [(0.5, 0.5)], grid_step=(1e-4, 1e-4), max_cells=1000)


def test_dp_choice_falls_back_to_enumeration_on_huge_grids():
    server = ServerSpec(0, (90.0, 90.0, 5000.0))
    demands = [(15.0, 8.0, 1690.0), (17.1, 6.5, 420.0), (7.0, 20.0, 1690.0)]
    solver = make_solver(SolverChoice("dp"), server, demands)
    q = (3, 10, 2)
    assert solver.solve(q).weight == brute_force_best(server, demands, q)


def test_greedy_example1():
    # Q = (0, 10): type 2 has the largest queue-weighted count; it fills the server
    r = max_weight_greedy(EX1_SERVER, EX1_DEMANDS, (0, 10))
    assert r.config == (0, 6)
    # N_f = 1 (only one large job fits) gives the bound 1/(R(N_f+1)) = 1/2
    assert r.ratio == pytest.approx(0.5)


def test_solver_restricted_to_fitting_types():
    small = ServerSpec(0, (1.0,))
    demands = [(1.0,), (2.0,), (4.0,)]
    for kind in ("exhaustive", "dp", "greedy"):
        r = make_solver(SolverChoice(kind), small, demands).solve((0, 5, 5))
        assert r.config == (1, 0, 0)


def test_solver_choice_validation():
    with pytest.raises(ValueError):
        SolverChoice("simplex")
    with pytest.raises(ValueError):
        SolverChoice("dp", (0.0,))


def _random_instance(rng):
    R = rng.randint(1, 3)
    J = rng.randint(1, 4)
    cap = tuple(float(rng.randint(1, 12)) for _ in range(R))
    demands = []
    for _ in range(J):
        while True:
            d = tuple(float(rng.randint(0, int(c))) for c in cap)
            if any(d):
                break
        demands.append(d)
    queues = tuple(rng.randint(0, 9) for _ in range(J))
    return ServerSpec(0, cap), demands, queues


def test_random_instances_match_brute_force():
    rng = random.Random(20240611)
    for _ in range(150):
        server, demands, queues = _random_instance(rng)
        best = brute_force_best(server, demands, queues)
        ex = max_weight_exhaustive(server, demands, queues)
        dp = max_weight_dp(server, demands, queues)
        gr = max_weight_greedy(server, demands, queues)
        assert ex.weight == best and dp.weight == best
        for r in (ex, dp, gr):
            assert is_feasible(r.config, server, demands)
            assert weight(r.config, queues) == r.weight
            assert any(r.config)
        assert gr.weight >= gr.ratio * best - 1e-9


instances = st.tuples(
    st.lists(st.integers(1, 10), min_size=1, max_size=2),
    st.data(),
)


@settings(max_examples=60, deadline=None)
@given(instances)
def test_solutions_are_maximal_and_nonzero(inst):
    cap, data = inst
    J = data.draw(st.integers(1, 3))
    demands = [tuple(float(data.draw(st.integers(1, c))) for c in cap) for _ in range(J)]
    queues = tuple(data.draw(st.integers(0, 6)) for _ in range(J))
    server = ServerSpec(0, tuple(float(c) for c in cap))
    assert any(GreedySolver(server, demands).solve(queues).config)
    # the exact solvers always return maximal configurations
    for solver in (ExhaustiveSolver(server, demands), DPSolver(server, demands)):
        k = solver.solve(queues).config
        assert any(k)
        for j in range(J):
            bigger = list(k)
            bigger[j] += 1
            assert not is_feasible(bigger, server, demands), (k, j)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=2, max_size=2), st.integers(1, 5))
def test_weight_scales_with_queues(queues, c):
    # the optimum of c*Q is c times the optimum of Q
    a = max_weight_exhaustive(EX1_SERVER, EX1_DEMANDS, queues).weight
    b = max_weight_exhaustive(EX1_SERVER, EX1_DEMANDS, [c * q for q in queues]).weight
    assert b == c * a
