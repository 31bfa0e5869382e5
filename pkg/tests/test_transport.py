import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qotl import oracles
from qotl.ansatz import Ensemble, model_states, sample_latents
from qotl.cost import local_cost_exact
from qotl.qsim import Statevector
from qotl.transport import (TransportError, TransportPlan, dual_objective, otl_between_ensembles,
                            solve_ot_uniform, solve_ot_weighted, transportation_simplex)

from conftest import random_spec, random_state, seeds


def check_marginals(plan: TransportPlan, p, q):
    d = plan.dense()
    assert np.abs(d.sum(axis=1) - p).max() < 1e-9
    assert np.abs(d.sum(axis=0) - q).max() < 1e-9
    assert np.all(plan.mass > 0)
    assert len(plan) <= plan.m + plan.m_g - 1


def test_trivial_instances():
    loss, plan = solve_ot_uniform(np.array([[0.3]]))
    assert loss == 0.3 and plan.entries() == [(0, 0, 1.0)]
    loss, plan = solve_ot_uniform(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert loss == 0 and plan.entries() == [(0, 0, 0.5), (1, 1, 0.5)]
    loss, _ = solve_ot_uniform(np.array([[1.0, 2.0], [3.0, 0.0]]))
    assert loss == pytest.approx(0.5)


@pytest.mark.parametrize("method", ["assignment", "simplex"])
def test_methods_on_known_instance(method):
    loss, plan = solve_ot_uniform(np.array([[1.0, 2.0], [3.0, 0.0]]), method)
    assert loss == pytest.approx(0.5)
    check_marginals(plan, [0.5, 0.5], [0.5, 0.5])


def test_validation():
    with pytest.raises(TransportError):
        solve_ot_uniform(np.array([[-0.1]]))
    with pytest.raises(TransportError):
        solve_ot_uniform(np.array([[np.nan]]))
    with pytest.raises(TransportError):
        solve_ot_uniform(np.zeros((0, 2)))
    with pytest.raises(TransportError):
        solve_ot_weighted(np.ones((2, 2)), [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(TransportError):
        solve_ot_uniform(np.ones((2, 3)), "assignment")
    with pytest.raises(ValueError):
        solve_ot_uniform(np.ones((2, 2)), "sinkhorn")


@given(seed=seeds, m=st.integers(1, 6), method=st.sampled_from(["auto", "simplex"]))
def test_uniform_square_matches_permutations(seed, m, method):
    c = np.random.default_rng(seed).random((m, m))
    loss, plan = solve_ot_uniform(c, method)
    assert abs(loss - oracles.brute_force_assignment(c)) < 1e-12
    check_marginals(plan, np.full(m, 1 / m), np.full(m, 1 / m))


@given(seed=seeds, m=st.integers(1, 3), m_g=st.integers(1, 3))
def test_rectangular_uniform_matches_enumeration(seed, m, m_g):
    c = np.random.default_rng(seed).random((m, m_g))
    p, q = np.full(m, 1 / m), np.full(m_g, 1 / m_g)
    loss, plan = solve_ot_uniform(c)
    assert abs(loss - oracles.enumerate_bfs(c, p, q)) < 1e-12
    check_marginals(plan, p, q)


@given(seed=seeds, shape=st.sampled_from([(2, 3), (3, 2), (3, 3), (1, 3)]))
def test_weighted_matches_enumeration(seed, shape):
    rng = np.random.default_rng(seed)
    c = rng.random(shape)
    p = rng.dirichlet(np.ones(shape[0]))
    q = rng.dirichlet(np.ones(shape[1]))
    loss, plan = solve_ot_weighted(c, p, q)
    assert abs(loss - oracles.enumerate_bfs(c, p, q)) < 1e-12
    check_marginals(plan, p, q)


@given(seed=seeds, m=st.integers(1, 5), m_g=st.integers(1, 5))
def test_weighted_uniform_reproduces_uniform(seed, m, m_g):
    c = np.random.default_rng(seed).random((m, m_g))
    a = solve_ot_uniform(c)[0]
    b = solve_ot_weighted(c, np.full(m, 1 / m), np.full(m_g, 1 / m_g))[0]
    assert a == pytest.approx(b, abs=1e-12)


def test_point_mass_row():
    c = np.random.default_rng(0).random((2, 3))
    _, plan = solve_ot_weighted(c, [1.0, 0.0], [0.2, 0.3, 0.5])
    assert set(plan.rows.tolist()) == {0}


@given(seed=seeds, m=st.integers(1, 6), m_g=st.integers(1, 6))
def test_duality_gap_closes(seed, m, m_g):
    rng = np.random.default_rng(seed)
    c = rng.random((m, m_g))
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m_g))
    loss, plan = solve_ot_weighted(c, p, q)
    assert abs(loss - dual_objective(c, p, q, plan)) < 1e-9


@given(seed=seeds, m=st.integers(1, 6), m_g=st.integers(1, 6))
def test_perturbation_stability(seed, m, m_g):
    rng = np.random.default_rng(seed)
    c1 = rng.random((m, m_g))
    c2 = np.clip(c1 + rng.normal(scale=0.05, size=c1.shape), 0, None)
    l1, p1 = solve_ot_uniform(c1)
    l2, p2 = solve_ot_uniform(c2)
    support = set(zip(p1.rows.tolist(), p1.cols.tolist())) | set(zip(p2.rows.tolist(), p2.cols.tolist()))
    bound = max(abs(c1[i, j] - c2[i, j]) for i, j in support)
    assert abs(l1 - l2) <= bound + 1e-12


def test_degenerate_ties_are_deterministic():
    c = np.ones((4, 4))
    a = solve_ot_uniform(c, "simplex")[1]
    b = solve_ot_uniform(c, "simplex")[1]
    assert a.entries() == b.entries()


def test_simplex_handles_large_rectangles():
    rng = np.random.default_rng(2)
    c = rng.random((12, 7))
    loss, basis = transportation_simplex(c, np.full(12, 7.0), np.full(7, 12.0), tol=0.5)
    assert len(basis) == 12 + 7 - 1
    assert loss / 84 == pytest.approx(solve_ot_uniform(c)[0])


@given(seed=seeds, n=st.integers(1, 3), m=st.integers(1, 5))
def test_otl_nonnegative_and_zero_on_identical(seed, n, m):
    rng = np.random.default_rng(seed)
    spec = random_spec(n, 2, 1, rng)
    zs = sample_latents(m, 1, rng)
    ens = Ensemble.from_matrix(model_states(spec, zs))
    loss, _, _ = otl_between_ensembles(ens, spec, zs)
    assert 0 <= loss < 1e-9
    other = Ensemble(tuple(random_state(n, rng) for _ in range(m)))
    assert otl_between_ensembles(other, spec, sample_latents(m + 1, 1, rng))[0] >= 0


def test_otl_single_pair_equals_ground_cost(rng):
    spec = random_spec(2, 2, 1, rng)
    psi = random_state(2, rng)
    loss, plan, c = otl_between_ensembles(Ensemble((psi,)), spec, [[0.6]])
    assert loss == pytest.approx(local_cost_exact(psi, spec, [0.6]))


def test_otl_weighted_ensemble(rng):
    spec = random_spec(1, 2, 1, rng)
    ens = Ensemble((Statevector.zero(1), Statevector.basis(1, 1)), [0.25, 0.75])
    loss, plan, c = otl_between_ensembles(ens, spec, [[0.1], [0.9]])
    check_marginals(plan, [0.25, 0.75], [0.5, 0.5])
    assert loss == pytest.approx(oracles.enumerate_bfs(c, np.array([0.25, 0.75]), np.array([0.5, 0.5])))


def test_plan_csv():
    plan = solve_ot_uniform(np.array([[0.0, 1.0], [1.0, 0.0]]))[1]
    buf = io.StringIO()
    plan.write_csv(buf)
    assert buf.getvalue() == "i,j,mass\n0,0,0.5\n1,1,0.5\n"
