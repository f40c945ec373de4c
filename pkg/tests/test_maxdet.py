import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grid_stationary_nats, grid_tv2_nats, open_loop_cost, random_pd
from ratelqg.maxdet import (INFEASIBLE, MaxDetProblem, budget_floor, build_po_problem,
                            build_stationary_problem, build_tv_problem,
                            build_tv_singular_problem, build_vstar_problem, po_reduction,
                            smat, solve, svec)
from ratelqg.maxdet.problem import svec_size
from ratelqg.model import PartiallyObservedPlant, StationaryPlant, TimeVaryingPlant, example_plant
from ratelqg.riccati import backward_riccati, solve_are
from ratelqg.synthesis import prekf_design

LN2 = np.log(2.0)


def solved(problem):
    sol = solve(problem)
    assert sol.optimal, sol.message
    scale = 1 + max(np.abs(F.const).max() for F in problem.lmis)
    assert sol.min_constraint_eig >= -1e-9 * scale
    return sol.objective_nats


def close(a, b, rel=1e-6):
    return abs(a - b) <= rel * (1 + abs(a))


def scalar_tv(a, w, T, P0=1.0, b=1.0, q=1.0, r=1.0):
    return TimeVaryingPlant([[[a]]] * T, [[[b]]] * T, [[[w]]] * T, [[[q]]] * T,
                            [[[r]]] * T, [[P0]])


def random_tv(rng, n, T):
    A = [rng.normal(size=(n, n)) * 0.9 for _ in range(T)]
    B = [rng.normal(size=(n, n)) for _ in range(T)]
    W = [random_pd(rng, n, 0.2) for _ in range(T)]
    Q = [random_pd(rng, n) for _ in range(T)]
    R = [random_pd(rng, n) for _ in range(T)]
    return TimeVaryingPlant(A, B, W, Q, R, random_pd(rng, n, 0.5))


def interior_budgets(floor, top, fracs):
    return [floor + f * (top - floor) for f in fracs]


# -- vectorization -------------------------------------------------------------

@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_svec_round_trip_and_inner_product(k, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(2, k, k))
    X, Y = X + X.T, Y + Y.T
    assert svec(X).shape == (svec_size(k),)
    np.testing.assert_allclose(smat(svec(X), k), X, atol=1e-14)
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y), abs=1e-10 * (1 + np.abs(X).sum() * np.abs(Y).sum()))


# -- generic solver -------------------------------------------------------------

def test_identity_bound():
    p = MaxDetProblem()
    Pi = p.add_variable("Pi", 1)
    p.add_logdet(lambda X: X, Pi)
    p.add_lmi(lambda X: np.eye(1) - X, Pi)
    sol = solve(p)
    assert sol.optimal
    assert sol.objective_nats == pytest.approx(0.0, abs=1e-7)
    assert sol.values["Pi"][0, 0] == pytest.approx(1.0, abs=1e-7)


def test_two_variable_bound():
    p = MaxDetProblem()
    P = p.add_variable("P", 1)
    Pi = p.add_variable("Pi", 1)
    p.add_logdet(lambda X: X, Pi)
    p.add_lmi(lambda X, Y: X - Y, P, Pi)
    p.add_lmi(lambda X: 2 * np.eye(1) - X, P)
    sol = solve(p)
    assert sol.optimal
    assert sol.objective_nats == pytest.approx(-LN2, abs=1e-7)
    assert sol.values["P"][0, 0] == pytest.approx(2.0, abs=1e-6)
    assert sol.gap_estimate <= 1e-8


def test_empty_feasible_set():
    p = MaxDetProblem()
    Pi = p.add_variable("Pi", 1)
    p.add_logdet(lambda X: X, Pi)
    p.add_lmi(lambda X: X - 2 * np.eye(1), Pi)
    p.add_lmi(lambda X: np.eye(1) - X, Pi)
    sol = solve(p)
    assert sol.status == INFEASIBLE
    assert sol.phase1_value > 0


def test_matrix_identity_bound():
    p = MaxDetProblem()
    X = p.add_variable("X", 3)
    p.add_logdet(lambda Z: Z, X, weight=0.5)
    M = np.diag([1.0, 2.0, 4.0])
    p.add_lmi(lambda Z: M - Z, X)
    sol = solve(p)
    assert sol.optimal
    assert sol.objective_nats == pytest.approx(-0.5 * np.log(8.0), abs=1e-7)


def test_unconstrained_variable_rejected():
    p = MaxDetProblem()
    X = p.add_variable("X", 1)
    p.add_variable("Y", 1)
    p.add_logdet(lambda Z: Z, X)
    p.add_lmi(lambda Z: np.eye(1) - Z, X)
    with pytest.raises(ValueError, match="Y appears in no constraint"):
        solve(p)


def test_asymmetric_expression_rejected():
    p = MaxDetProblem()
    X = p.add_variable("X", 2)
    with pytest.raises(ValueError):
        p.add_lmi(lambda Z: np.array([[0.0, 1.0], [0.0, 0.0]]) + Z, X)


# -- finite horizon builders ------------------------------------------------------

def test_single_stage_needs_no_information():
    plant = scalar_tv(0.0, 1.0, T=1)
    bundle = backward_riccati(plant)
    assert solved(build_tv_problem(plant, bundle, 2.0)) == pytest.approx(0.0, abs=1e-7)


def test_single_stage_below_floor():
    plant = scalar_tv(0.0, 1.0, T=1)
    prob = build_tv_problem(plant, backward_riccati(plant), 0.5)
    assert prob.meta["floor"] == pytest.approx(1.0)
    sol = solve(prob)
    assert sol.status == INFEASIBLE and "c2=1" in sol.message


@pytest.mark.parametrize("a,w,P0,frac", [(2.0, 1.0, 1.0, 0.3), (0.5, 2.0, 3.0, 0.5), (-1.5, 0.5, 1.0, 0.7)])
def test_two_stage_matches_grid(a, w, P0, frac):
    plant = scalar_tv(a, w, T=2, P0=P0)
    bundle = backward_riccati(plant)
    floor, top = open_loop_cost(plant, bundle)
    D = interior_budgets(floor, top, [frac])[0]
    ref = grid_tv2_nats(a, 1.0, w, 1.0, 1.0, P0, D)
    assert solved(build_tv_problem(plant, bundle, D)) == pytest.approx(ref, abs=1e-6)
    assert solved(build_tv_singular_problem(plant, bundle, D)) == pytest.approx(ref, abs=1e-6)


def test_singular_variant_noise_free_point():
    plant = scalar_tv(2.0, 0.0, T=2, P0=1.5)
    bundle = backward_riccati(plant)
    prob = build_tv_singular_problem(plant, bundle, 100.0)
    # holding the covariance fixed costs log|a| per transition
    x = prob.pack({"P1": np.array([[1.5]]), "P2": np.array([[1.5]])})
    assert prob.objective(x) == pytest.approx(LN2, abs=1e-12)
    assert solved(prob) <= LN2


def test_singular_variant_needs_invertible_dynamics():
    plant = scalar_tv(0.0, 1.0, T=2)
    with pytest.raises(ValueError, match="A_1 is singular"):
        build_tv_singular_problem(plant, backward_riccati(plant), 10.0)


def test_regular_variant_rejects_singular_noise():
    plant = scalar_tv(2.0, 0.0, T=2)
    with pytest.raises(ValueError, match="W_1 is singular"):
        build_tv_problem(plant, backward_riccati(plant), 10.0)


@settings(max_examples=8)
@given(st.integers(0, 2 ** 32 - 1))
def test_builder_variants_agree(seed):
    rng = np.random.default_rng(seed)
    plant = random_tv(rng, int(rng.integers(1, 3)), int(rng.integers(2, 4)))
    bundle = backward_riccati(plant)
    floor, top = open_loop_cost(plant, bundle)
    D = interior_budgets(floor, top, [rng.uniform(0.1, 0.9)])[0]
    a = solved(build_tv_problem(plant, bundle, D))
    b = solved(build_tv_singular_problem(plant, bundle, D))
    assert close(a, b), (a, b)


def test_floor_matches_cost_formula():
    plant = random_tv(np.random.default_rng(3), 2, 3)
    bundle = backward_riccati(plant)
    c2, _ = open_loop_cost(plant, bundle)
    assert budget_floor(plant, bundle) == pytest.approx(c2, rel=1e-12)


# -- stationary builder -----------------------------------------------------------

def test_scalar_stationary_closed_form():
    plant = StationaryPlant([[2.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    bits = solved(build_stationary_problem(plant, solve_are(plant), 11.09017)) / LN2
    assert bits == pytest.approx(0.5 * np.log2(6.0), abs=1e-5)


@pytest.mark.parametrize("a,b,w,q,r,D", [(2.0, 1.0, 1.0, 1.0, 1.0, 15.0), (0.6, 1.0, 1.0, 2.0, 1.0, 3.0),
                                         (-1.2, 0.5, 2.0, 1.0, 3.0, 30.0)])
def test_scalar_stationary_matches_grid(a, b, w, q, r, D):
    plant = StationaryPlant([[a]], [[b]], [[w]], [[q]], [[r]])
    ref = grid_stationary_nats(a, b, w, q, r, D)
    assert solved(build_stationary_problem(plant, solve_are(plant), D)) == pytest.approx(ref, abs=1e-6)


def test_stationary_below_floor():
    plant = example_plant()
    bundle = solve_are(plant)
    floor = float(np.trace(plant.W @ bundle.S[0]))
    sol = solve(build_stationary_problem(plant, bundle, floor - 1e-6))
    assert sol.status == INFEASIBLE and "Tr(WS)" in sol.message


def test_start_point_keeps_budget_margin():
    rng = np.random.default_rng(1000)
    A = rng.normal(size=(2, 2)) * 1.2
    plant = StationaryPlant(A, rng.normal(size=(2, 2)), random_pd(rng, 2, 0.2), np.eye(2), np.eye(2))
    bundle = solve_are(plant)
    floor = float(np.trace(plant.W @ bundle.S[0]))
    prob = build_stationary_problem(plant, bundle, 1.05 * floor)
    slack = [F for F in prob.lmis if F.label == "budget"][0](prob.initial_point)[0, 0]
    # a start pinned against the budget left Newton with a singular Hessian
    assert slack > 1e-3 * floor
    assert solved(prob) > 0


def test_stationary_singular_noise_rejected():
    plant = StationaryPlant([[2.0, 0], [0, 1]], np.eye(2), np.diag([1.0, 0.0]), np.eye(2), np.eye(2))
    with pytest.raises(ValueError, match="W is singular"):
        build_stationary_problem(plant, solve_are(plant), 50.0)


def test_long_horizon_approaches_stationary():
    stat = StationaryPlant([[2.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    bundle = solve_are(stat)
    S, Th = bundle.S[0][0, 0], bundle.Theta[0][0, 0]
    D = S + 0.5 * Th
    rate = solved(build_stationary_problem(stat, bundle, D))
    T = 60
    # start from the stationary prediction covariance and spend the stationary per-stage budget
    p = 0.5
    tv = stat.time_varying(T, [[4 * p + 1]])
    tvb = backward_riccati(tv)
    total = solved(build_tv_problem(tv, tvb, budget_floor(tv, tvb) + T * Th * p))
    assert total / T == pytest.approx(rate, abs=0.02)


# -- budget monotonicity and convexity ----------------------------------------------

def _check_value_function(values):
    lo, mid, hi = values
    assert lo >= mid - 1e-7 and mid >= hi - 1e-7
    assert mid <= 0.5 * (lo + hi) + 1e-6


@settings(max_examples=6)
@given(st.integers(0, 2 ** 32 - 1))
def test_tv_value_monotone_convex(seed):
    rng = np.random.default_rng(seed)
    plant = random_tv(rng, 2, 3)
    bundle = backward_riccati(plant)
    floor, top = open_loop_cost(plant, bundle)
    Ds = interior_budgets(floor, top, sorted(rng.uniform(0.05, 0.95, 2)) + [0.0])
    Ds = [Ds[0], 0.5 * (Ds[0] + Ds[1]), Ds[1]]
    _check_value_function([solved(build_tv_problem(plant, bundle, D)) for D in Ds])
    _check_value_function([solved(build_tv_singular_problem(plant, bundle, D)) for D in Ds])


@settings(max_examples=6)
@given(st.integers(0, 2 ** 32 - 1))
def test_stationary_value_monotone_convex(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2)) * 1.2
    plant = StationaryPlant(A, rng.normal(size=(2, 2)), random_pd(rng, 2, 0.2), random_pd(rng, 2),
                            random_pd(rng, 2))
    bundle = solve_are(plant)
    floor = float(np.trace(plant.W @ bundle.S[0]))
    span = float(np.trace(bundle.Theta[0] @ plant.W)) + 1e-3
    c = sorted(rng.uniform(0.05, 3.0, 2))
    Ds = [floor + c[0] * span, floor + 0.5 * (c[0] + c[1]) * span, floor + c[1] * span]
    _check_value_function([solved(build_stationary_problem(plant, bundle, D)) for D in Ds])


# -- partially observed -------------------------------------------------------------

def po_scalar(a, w, g, T, h=1.0):
    return PartiallyObservedPlant(scalar_tv(a, w, T), [[[h]]] * (T + 1), [[[g]]] * (T + 1))


def test_po_perfect_sensor_reduces_exactly():
    plant = random_tv(np.random.default_rng(11), 2, 3)
    po = PartiallyObservedPlant(plant, [np.eye(2)] * 4, [np.zeros((2, 2))] * 4)
    bundle = backward_riccati(plant)
    D = interior_budgets(*open_loop_cost(plant, bundle), [0.5])[0]
    a = build_po_problem(po, bundle, prekf_design(po), D)
    b = build_tv_problem(plant, bundle, D)
    assert a.meta["estimation_offset"] == pytest.approx(0.0, abs=1e-12)
    assert a.meta["reduced_budget"] == D
    assert a.constant_offset == pytest.approx(b.constant_offset, rel=1e-12)
    for Fa, Fb in zip(a.lmis, b.lmis):
        np.testing.assert_allclose(Fa.const, Fb.const, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(Fa.coeffs, Fb.coeffs, rtol=1e-12, atol=1e-12)
    assert solved(a) == pytest.approx(solved(b), abs=1e-9)


def test_po_needs_at_least_the_full_observation_rate():
    # a fully observed controller can synthesize the noisy sensor itself, and
    # information about x only reaches u through y, so DI_po(D) >= DI_fo(D)
    po = po_scalar(2.0, 1.0, 1.0, T=2)
    bundle = backward_riccati(po.plant)
    prekf = prekf_design(po)
    reduced, offset = po_reduction(po, prekf)
    floor, top = open_loop_cost(reduced, bundle)
    for frac in (0.2, 0.5, 0.8):
        D = offset + floor + frac * (top - floor)
        di_po = solved(build_po_problem(po, bundle, prekf, D))
        di_fo = solved(build_tv_problem(po.plant, bundle, D))
        assert di_po >= di_fo - 1e-7
        # the partially observed problem is exactly the reduced plant's problem
        assert di_po == pytest.approx(solved(build_tv_problem(reduced, bundle, D - offset)), abs=1e-9)


def test_po_uninformative_sensor_is_infeasible():
    po = po_scalar(2.0, 1.0, 1e6, T=2)
    prekf = prekf_design(po)
    prob = build_po_problem(po, backward_riccati(po.plant), prekf, 20.0)
    assert prob.meta["floor"] > 20.0
    # the estimation error charge approaches the open-loop covariance cost
    openloop = 1.0 * (4 * 1 + 1) + 1.0 * (4 * 5 + 1)
    assert prob.meta["estimation_offset"] == pytest.approx(openloop, rel=1e-4)
    sol = solve(prob)
    assert sol.status == INFEASIBLE and "estimation error" in sol.message


@settings(max_examples=5)
@given(st.integers(0, 2 ** 32 - 1))
def test_po_value_monotone_convex(seed):
    rng = np.random.default_rng(seed)
    plant = random_tv(rng, 2, 2)
    H = [rng.normal(size=(2, 2)) + 2 * np.eye(2) for _ in range(3)]
    G = [random_pd(rng, 2, 0.1) for _ in range(3)]
    po = PartiallyObservedPlant(plant, H, G)
    bundle = backward_riccati(plant)
    prekf = prekf_design(po)
    reduced, offset = po_reduction(po, prekf)
    floor, top = open_loop_cost(reduced, bundle)
    Ds = [offset + floor + f * (top - floor) for f in (0.2, 0.45, 0.7)]
    _check_value_function([solved(build_po_problem(po, bundle, prekf, D)) for D in Ds])


def test_po_fewer_sensors_than_states_rejected():
    plant = random_tv(np.random.default_rng(5), 2, 2)
    po = PartiallyObservedPlant(plant, [np.array([[1.0, 0.0]])] * 3, [np.eye(1)] * 3)
    with pytest.raises(ValueError, match="singular"):
        po_reduction(po, prekf_design(po))


# -- asymptote problem ----------------------------------------------------------------

def test_vstar_stable_is_zero():
    assert solved(build_vstar_problem([[0.5]], [[1.0]])) == pytest.approx(0.0, abs=1e-7)


def test_vstar_scalar_unstable():
    assert solved(build_vstar_problem([[2.0]], [[1.0]])) / LN2 == pytest.approx(1.0, abs=1e-3)


def test_vstar_benchmark():
    p = example_plant()
    bits = solved(build_vstar_problem(p.A, p.W)) / LN2
    assert bits == pytest.approx(1.169, abs=0.005)


def vstar_pair(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2)) * 1.3
    W1 = random_pd(rng, 2, 0.2)
    W2 = W1 + random_pd(rng, 2, 0.0) * rng.uniform(0.1, 2.0)
    # one cap for both, so the feasible sets are nested
    cap = 1e3 * (1 + np.trace(W2))
    return (solved(build_vstar_problem(A, W1, cap=cap)),
            solved(build_vstar_problem(A, W2, cap=cap)))


@pytest.mark.parametrize("seed", range(10))
def test_vstar_monotone_in_noise(seed):
    v1, v2 = vstar_pair(seed)
    assert v1 <= v2 + 1e-7


@pytest.mark.xfail(strict=True, reason="trace cap error (~3e-5 nats) exceeds 1e-7 on this pair")
def test_vstar_monotone_known_cap_counterexample():
    # direct SLSQP on the capped objective confirms both values to 1e-9
    v1, v2 = vstar_pair(705120)
    assert v1 <= v2 + 1e-7


# -- optional cross-check against an external conic solver ------------------------------

@pytest.mark.filterwarnings("ignore::UserWarning")
def test_stationary_against_cvxpy():
    cp = pytest.importorskip("cvxpy")
    plant = example_plant()
    bundle = solve_are(plant)
    A, W, Th = plant.A, plant.W, bundle.Theta[0]
    D = 40.0
    floor = float(np.trace(W @ bundle.S[0]))
    P = cp.Variable((4, 4), symmetric=True)
    Pi = cp.Variable((4, 4), symmetric=True)
    cons = [A @ P @ A.T + W - P >> 0,
            cp.bmat([[P - Pi, P @ A.T], [A @ P, A @ P @ A.T + W]]) >> 0,
            cp.trace(Th @ P) + floor <= D]
    prob = cp.Problem(cp.Minimize(-0.5 * cp.log_det(Pi)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except Exception as exc:  # solver missing or failed; the cross-check is optional
        pytest.skip(f"cvxpy could not solve: {exc}")
    ref = prob.value + 0.5 * np.linalg.slogdet(W)[1]
    assert solved(build_stationary_problem(plant, bundle, D)) == pytest.approx(ref, abs=1e-5)
