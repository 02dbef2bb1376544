#!/usr/bin/env python3
"""
Test Consensus Engine
Operator algebra, the Mann iteration and equilibrium diagnostics
"""

import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from consensus import (AgentOp, EquilibriumReport, StackedState, apply_agents, check_firm_nonexpansiveness,
                       consensus_average, mace_iterate, reflect_agents, reflect_consensus, verify_equilibrium)
from errors import AgentError, ParameterError, StateError


def quadratic_prox(name, c):
    """prox of 0.5 ||x - c||^2 with unit step"""
    return AgentOp(name, lambda z: (c + np.asarray(z)) / 2.0)


def identity(name='identity'):
    return AgentOp(name, lambda z: np.array(z, dtype=np.float64))


def test_consensus_average_broadcasts_mean():
    state = StackedState([[1.0, 2.0], [3.0, 4.0]])
    out = consensus_average(state)
    np.testing.assert_array_equal(out.vectors, [[2.0, 3.0], [2.0, 3.0]])


def test_consensus_average_of_equal_copies_is_identity():
    state = StackedState.replicate(np.array([0.3, -1.0, 7.5]), 4)
    np.testing.assert_array_equal(consensus_average(state).vectors, state.vectors)


def test_reflect_consensus_is_self_inverse_and_norm_preserving():
    rng = np.random.default_rng(0)
    for _ in range(100):
        state = StackedState(rng.normal(size=(3, 20)))
        once = reflect_consensus(state)
        twice = reflect_consensus(once)
        assert np.linalg.norm(twice.vectors - state.vectors) <= 1e-12 * state.norm()
        assert abs(once.norm() - state.norm()) <= 1e-12 * state.norm()


def test_reflect_agents_identity_and_constant():
    state = StackedState([[1.0, 2.0], [5.0, -1.0]])
    same = reflect_agents(state, [identity('a'), identity('b')])
    np.testing.assert_allclose(same.vectors, state.vectors)

    c = np.array([0.25, 0.75])
    const = AgentOp('const', lambda z: c.copy())
    out = reflect_agents(state, [const, const])
    np.testing.assert_allclose(out.vectors, 2 * c[None, :] - state.vectors)


def test_stacked_state_rejects_ragged_vectors():
    with pytest.raises(StateError):
        StackedState.from_vectors([np.zeros(3), np.zeros(4)])
    with pytest.raises(StateError):
        StackedState(np.zeros(5))


def test_identity_agents_from_consensus_converge_in_one_iteration():
    x = np.array([0.2, 0.4, 0.9])
    report = mace_iterate(StackedState.replicate(x, 3), [identity('a'), identity('b'), identity('c')])
    assert report.converged
    assert report.iterations_used == 1
    np.testing.assert_allclose(report.solution, x)


def test_identity_agents_keep_the_mean_of_a_split_start():
    initial = StackedState([[0.0, 1.0], [2.0, 3.0]])
    report = mace_iterate(initial, [identity('a'), identity('b')], max_iter=7)
    assert not report.converged
    np.testing.assert_allclose(report.solution, [1.0, 2.0])


def test_two_quadratics_reach_the_analytic_mean():
    n = 6
    agents = [quadratic_prox('zero', np.zeros(n)), quadratic_prox('one', np.ones(n))]
    report = mace_iterate(StackedState.replicate(np.full(n, 0.9), 2), agents, tol=1e-10, max_iter=100)
    assert report.converged
    assert report.iterations_used <= 100
    np.testing.assert_allclose(report.solution, 0.5, atol=1e-6)

    diag = verify_equilibrium(report, agents, tol=1e-5)
    assert diag.passed
    assert max(diag.agent_residuals.values()) <= 1e-5
    assert diag.consensus_residual <= 1e-5


def test_mann_averaging_converges_to_the_same_point():
    n = 4
    agents = [quadratic_prox('zero', np.zeros(n)), quadratic_prox('one', np.ones(n))]
    report = mace_iterate(StackedState.replicate(np.zeros(n), 2), agents, tol=1e-10,
                          max_iter=200, mann_weight=0.5)
    assert report.converged
    np.testing.assert_allclose(report.solution, 0.5, atol=1e-6)


def test_single_agent_returns_a_fixed_point():
    c = np.array([0.1, 0.6, 0.3])
    agent = quadratic_prox('only', c)
    report = mace_iterate(StackedState.replicate(np.zeros(3), 1), [agent], tol=1e-10, max_iter=50)
    assert report.converged
    np.testing.assert_allclose(agent(report.solution), report.solution, atol=1e-8)


def test_verify_flags_a_perturbed_solution():
    n, tol = 5, 1e-5
    agents = [quadratic_prox('zero', np.zeros(n)), quadratic_prox('one', np.ones(n))]
    report = mace_iterate(StackedState.replicate(np.zeros(n), 2), agents, tol=1e-12, max_iter=100)
    shifted = EquilibriumReport(solution=report.solution + 10 * tol, tensions=report.tensions,
                                residual_history=report.residual_history,
                                iterations_used=report.iterations_used, converged=True)
    diag = verify_equilibrium(shifted, agents, tol)
    assert not diag.passed
    assert max(diag.agent_residuals.values()) > tol


def test_identity_agents_have_zero_residuals():
    x = np.array([1.0, 2.0])
    agents = [identity('a'), identity('b')]
    report = mace_iterate(StackedState.replicate(x, 2), agents)
    diag = verify_equilibrium(report, agents, tol=1e-12)
    assert diag.passed
    assert all(r == 0 for r in diag.agent_residuals.values())
    assert diag.consensus_residual == 0


def test_non_finite_agent_output_names_agent_and_iteration():
    bad = AgentOp('broken', lambda z: np.full_like(z, np.nan))
    with pytest.raises(AgentError) as excinfo:
        mace_iterate(StackedState.replicate(np.zeros(3), 2), [identity(), bad])
    assert excinfo.value.agent == 'broken'
    assert excinfo.value.iteration == 1
    assert 'broken' in str(excinfo.value)


def test_agent_exceptions_and_wrong_shapes_become_agent_errors():
    def explode(z):
        raise RuntimeError("boom")

    state = StackedState.replicate(np.zeros(3), 1)
    with pytest.raises(AgentError):
        apply_agents(state, [AgentOp('explode', explode)])
    with pytest.raises(AgentError):
        apply_agents(state, [AgentOp('short', lambda z: z[:2])])


def test_iteration_parameters_are_validated():
    state = StackedState.replicate(np.zeros(2), 2)
    agents = [identity('a'), identity('b')]
    with pytest.raises(ParameterError):
        mace_iterate(state, agents, mann_weight=1.5)
    with pytest.raises(ParameterError):
        mace_iterate(state, agents, tol=0)
    with pytest.raises(StateError):
        mace_iterate(state, agents[:1])


def test_executor_matches_sequential_run():
    rng = np.random.default_rng(3)
    cs = [rng.random(8) for _ in range(3)]
    agents = [quadratic_prox(f"q{i}", c) for i, c in enumerate(cs)]
    initial = StackedState.replicate(np.zeros(8), 3)
    sequential = mace_iterate(initial, agents, tol=1e-10, max_iter=100)
    with ThreadPoolExecutor(max_workers=3) as pool:
        parallel = mace_iterate(initial, agents, tol=1e-10, max_iter=100, executor=pool)
    np.testing.assert_array_equal(sequential.solution, parallel.solution)
    np.testing.assert_allclose(parallel.solution, np.mean(cs, axis=0), atol=1e-8)


def test_firm_nonexpansiveness_check():
    rng = np.random.default_rng(1)
    sampler = lambda: rng.normal(size=10)

    assert check_firm_nonexpansiveness(identity(), sampler, 50) <= 1e-12
    assert check_firm_nonexpansiveness(quadratic_prox('q', np.ones(10)), sampler, 1000) <= 1e-9
    assert check_firm_nonexpansiveness(AgentOp('double', lambda z: 2 * z), sampler, 5) > 0


def test_averaged_residuals_never_grow():
    rng = np.random.default_rng(8)
    sampler = lambda: rng.normal(size=50)
    # prox of (1/6) ||x - c||^2: its reflection halves differences
    agents = [AgentOp(f"w{i}", lambda z, c=rng.random(50): (np.asarray(z) + c / 3.0) * 0.75)
              for i in range(4)]
    for agent in agents:
        assert check_firm_nonexpansiveness(agent, sampler, 200) <= 1e-9

    initial = StackedState.replicate(np.zeros(50), 4)
    report = mace_iterate(initial, agents, tol=1e-14, max_iter=60, mann_weight=0.5)
    history = np.array(report.residual_history)
    assert len(history) > 10
    assert np.all(np.diff(history[1:]) <= 1e-9)
