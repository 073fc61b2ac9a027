import itertools
import random

import numpy as np
import pytest
from scipy.optimize import linprog

from stallsched.capacity import intensity_scale, region_membership, single_type_configs, workload_for_intensity
from stallsched.lp import UnboundedError, maximize
from stallsched.model import Exponential, ServerSpec
from stallsched.solvers import enumerate_maximal_configs

from conftest import EX1_DEMANDS, EX1_SERVER

VM_SERVER = (90.0, 90.0, 5000.0)
VM_DEMANDS = [(15.0, 8.0, 1690.0), (17.1, 6.5, 420.0), (7.0, 20.0, 1690.0)]
VM_DIRECTION = (2 / 3, 11 / 3, 2 / 3)


def scipy_scale(direction, servers, demands):
    """Independent formulation: one configuration mix per server, maximize t."""
    cols, owner = [], []
    for i, s in enumerate(servers):
        for k in enumerate_maximal_configs(s, demands):
            cols.append(k)
            owner.append(i)
    n = len(cols) + 1
    A, b = [], []
    for j, dj in enumerate(direction):
        row = [-k[j] for k in cols] + [dj]
        A.append(row)
        b.append(0.0)
    for i in range(len(servers)):
        A.append([1.0 if o == i else 0.0 for o in owner] + [0.0])
        b.append(1.0)
    c = [0.0] * (n - 1) + [-1.0]
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
    assert res.status == 0
    return -res.fun


def test_example1_boundary():
    assert intensity_scale((0.5, 4.0), [EX1_SERVER], EX1_DEMANDS) == pytest.approx(1.0, abs=1e-9)
    assert region_membership((0.5, 4.0), [EX1_SERVER], EX1_DEMANDS)
    assert not region_membership((0.6, 4.0), [EX1_SERVER], EX1_DEMANDS)


def test_region_is_down_closed():
    # points below a maximal configuration belong to the region even when they
    # are not convex combinations of maximal configurations themselves
    assert region_membership((0.1, 0.0), [EX1_SERVER], EX1_DEMANDS)
    assert region_membership((0.0, 0.0), [EX1_SERVER], EX1_DEMANDS)
    assert not region_membership((1.01, 0.0), [EX1_SERVER], EX1_DEMANDS)


def test_single_server_single_type():
    assert intensity_scale((1.0,), [ServerSpec(0, (6.0,))], [(1.0,)]) == pytest.approx(6.0)


def test_vm_fleet_scale_per_server_and_fleet():
    one = intensity_scale(VM_DIRECTION, [ServerSpec(0, VM_SERVER)], VM_DEMANDS)
    fleet = intensity_scale(VM_DIRECTION, [ServerSpec(i, VM_SERVER) for i in range(20)], VM_DEMANDS)
    assert one == pytest.approx(1.0, abs=1e-9)
    assert fleet == pytest.approx(20.0, abs=1e-8)


def test_heterogeneous_fleet_example2():
    servers = [ServerSpec(i, (float(c),)) for i, c in enumerate((1, 2, 4, 8))]
    demands = [(1.0,), (2.0,), (4.0,), (8.0,)]
    assert intensity_scale((1, 1, 1, 1), servers, demands) == pytest.approx(1.0)


def test_matches_scipy_on_random_fleets():
    rng = random.Random(7)
    for _ in range(40):
        R = rng.randint(1, 2)
        J = rng.randint(1, 3)
        servers = [ServerSpec(i, tuple(float(rng.randint(4, 10)) for _ in range(R))) for i in range(rng.randint(1, 3))]
        demands = [tuple(float(rng.randint(1, 4)) for _ in range(R)) for _ in range(J)]
        direction = [rng.random() + 0.05 for _ in range(J)]
        ours = intensity_scale(direction, servers, demands)
        assert ours == pytest.approx(scipy_scale(direction, servers, demands), rel=1e-7)


def test_membership_agrees_with_dual_grid_scan():
    # a point is outside the region iff some nonnegative price vector separates it:
    # p.rho > max over maximal configurations of p.k. Scan a grid of prices.
    configs = enumerate_maximal_configs(EX1_SERVER, EX1_DEMANDS)
    prices = [(a, b) for a, b in itertools.product(np.linspace(0, 1, 41), repeat=2) if a + b > 0]
    rng = np.random.default_rng(3)
    for rho in rng.uniform(0, [1.2, 6.5], size=(200, 2)):
        separated = any(p[0] * rho[0] + p[1] * rho[1] > max(p[0] * k[0] + p[1] * k[1] for k in configs) + 1e-9
                        for p in prices)
        t = intensity_scale(rho, [EX1_SERVER], EX1_DEMANDS)
        if abs(t - 1.0) > 0.02:  # the finite grid cannot resolve points at the boundary
            assert region_membership(rho, [EX1_SERVER], EX1_DEMANDS) == (not separated)


def test_single_type_region_is_smaller():
    full = intensity_scale((0.5, 4.0), [EX1_SERVER], EX1_DEMANDS)
    single = intensity_scale((0.5, 4.0), [EX1_SERVER], EX1_DEMANDS, single_type=True)
    assert single_type_configs(EX1_SERVER, EX1_DEMANDS) == [(1, 0), (0, 6)]
    # single-type mixes reach 0.5/1 + 4/6 = 7/6 per unit of t, so t = 6/7
    assert single == pytest.approx(6 / 7)
    assert single < full


def test_workload_for_intensity():
    lam = workload_for_intensity(0.89, (0.5, 4.0), [EX1_SERVER], EX1_DEMANDS, [Exponential(1.0)] * 2)
    assert lam == pytest.approx([0.445, 3.56])
    lam = workload_for_intensity(0.5, (1.0, 1.0), [EX1_SERVER], EX1_DEMANDS, [Exponential(2.0)] * 2)
    # configuration (1, 2) alone dominates (1, 1), so t* = 1; a mean of 1/2 doubles the rates
    assert intensity_scale((1.0, 1.0), [EX1_SERVER], EX1_DEMANDS) == pytest.approx(1.0)
    assert lam == pytest.approx([1.0, 1.0])


def test_invalid_directions():
    with pytest.raises(ValueError):
        intensity_scale((0.0, 0.0), [EX1_SERVER], EX1_DEMANDS)
    with pytest.raises(ValueError):
        intensity_scale((1.0,), [EX1_SERVER], EX1_DEMANDS)
    with pytest.raises(ValueError):
        workload_for_intensity(1.0, (1.0, 1.0), [EX1_SERVER], EX1_DEMANDS, [Exponential(1.0)] * 2)
    # a type that fits nowhere makes any positive scale impossible
    with pytest.raises(ValueError):
        intensity_scale((1.0, 1.0), [ServerSpec(0, (2.0,))], [(1.0,), (3.0,)])


def test_simplex_small_problems():
    # max x + y s.t. x + 2y <= 4, 3x + y <= 6
    value, x = maximize(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 1.0]]), np.array([4.0, 6.0]))
    assert value == pytest.approx(2.8)
    assert x == pytest.approx([1.6, 1.2])
    with pytest.raises(UnboundedError):
        maximize(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]), np.array([1.0]))


def test_simplex_matches_scipy_on_random_lps():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m, n = rng.integers(1, 6), rng.integers(1, 6)
        A = rng.uniform(0, 3, size=(m, n))
        A[0] = np.maximum(A[0], 0.1)  # keeps the problem bounded
        b = rng.uniform(0, 5, size=m)
        c = rng.uniform(-1, 2, size=n)
        value, x = maximize(c, A, b)
        res = linprog(-c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
        assert value == pytest.approx(-res.fun, abs=1e-8)
        assert np.all(A @ x <= b + 1e-8) and np.all(x >= -1e-12)
