"""
Consensus equilibrium engine
Stacked-state reflection, averaging, Mann-averaged fixed-point iteration and
equilibrium diagnostics over any list of agents
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import AgentError, ParameterError, StateError

logger = logging.getLogger(__name__)

EPS_MACH = np.finfo(np.float64).eps


@dataclass(frozen=True)
class AgentOp:
    """Named operator taking a length-n vector to a length-n vector"""
    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


class StackedState:
    """N copies of a length-n vector, stored as an (N, n) float array"""

    def __init__(self, vectors):
        arr = np.array(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise StateError(f"stacked state needs shape (N, n), got {arr.shape}")
        if arr.shape[0] < 1:
            raise StateError("stacked state needs at least one vector")
        self.vectors = arr

    @classmethod
    def from_vectors(cls, vectors: Sequence[np.ndarray]) -> 'StackedState':
        lengths = {np.asarray(v).size for v in vectors}
        if len(lengths) > 1:
            raise StateError(f"vectors have different lengths {sorted(lengths)}")
        return cls([np.asarray(v, dtype=np.float64).ravel() for v in vectors])

    @classmethod
    def replicate(cls, x: np.ndarray, count: int) -> 'StackedState':
        if count < 1:
            raise StateError("stacked state needs at least one vector")
        return cls(np.tile(np.asarray(x, dtype=np.float64).ravel(), (count, 1)))

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.vectors))

    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    def __repr__(self) -> str:
        return f"StackedState(N={self.N}, n={self.n})"


@dataclass
class EquilibriumReport:
    """Outcome of one consensus run"""
    solution: np.ndarray
    tensions: np.ndarray
    residual_history: List[float] = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float('inf')

    def agent_inputs(self) -> np.ndarray:
        """Points v_i = x* + u_i at which each agent is re-evaluated"""
        return self.solution[None, :] + self.tensions

    def to_dict(self) -> Dict:
        return {
            'iterations_used': self.iterations_used,
            'converged': self.converged,
            'final_residual': self.final_residual,
        }


@dataclass
class EquilibriumDiagnostics:
    """Per-agent and consensus residuals at a reported equilibrium"""
    agent_residuals: Dict[str, float]
    consensus_residual: float
    tol: float
    passed: bool


def consensus_average(state: StackedState) -> StackedState:
    """G: broadcast the arithmetic mean to every copy"""
    return StackedState(np.broadcast_to(state.mean(), state.vectors.shape))


def reflect_consensus(state: StackedState) -> StackedState:
    """2G - I"""
    return StackedState(2.0 * state.mean()[None, :] - state.vectors)


def _evaluate(agent: AgentOp, v: np.ndarray, iteration: Optional[int]) -> np.ndarray:
    try:
        out = np.asarray(agent(v), dtype=np.float64)
    except AgentError:
        raise
    except Exception as e:
        raise AgentError(agent.name, str(e), iteration) from e
    if out.shape != v.shape:
        raise AgentError(agent.name, f"returned shape {out.shape}, expected {v.shape}", iteration)
    if not np.all(np.isfinite(out)):
        raise AgentError(agent.name, "produced non-finite values", iteration)
    return out


def apply_agents(state: StackedState, agents: Sequence[AgentOp],
                 iteration: Optional[int] = None,
                 executor: Optional[Executor] = None) -> np.ndarray:
    """F(v): evaluate agent i on copy i, optionally on an executor"""
    if len(agents) != state.N:
        raise StateError(f"{len(agents)} agents for a state of {state.N} vectors")

    if executor is None:
        outputs = [_evaluate(agent, v, iteration) for agent, v in zip(agents, state.vectors)]
    else:
        futures = [executor.submit(_evaluate, agent, v, iteration)
                   for agent, v in zip(agents, state.vectors)]
        outputs = [f.result() for f in futures]
    return np.stack(outputs)


def reflect_agents(state: StackedState, agents: Sequence[AgentOp],
                   iteration: Optional[int] = None,
                   executor: Optional[Executor] = None) -> StackedState:
    """2F - I"""
    outputs = apply_agents(state, agents, iteration, executor)
    return StackedState(2.0 * outputs - state.vectors)


def mace_iterate(initial: StackedState, agents: Sequence[AgentOp], tol: float = 1e-4,
                 max_iter: int = 30, mann_weight: float = 1.0,
                 executor: Optional[Executor] = None) -> EquilibriumReport:
    """
    Run v <- (1 - rho) v + rho (2G - I)(2F - I) v until the relative change
    drops below tol or max_iter iterations have been spent.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ParameterError(f"max_iter must be at least 1, got {max_iter}")
    if not 0 < mann_weight <= 1:
        raise ParameterError(f"mann_weight must lie in (0, 1], got {mann_weight}")
    if len(agents) != initial.N:
        raise StateError(f"{len(agents)} agents for a state of {initial.N} vectors")

    names = ', '.join(a.name for a in agents)
    logger.debug(f"Consensus run over [{names}] with n={initial.n}, tol={tol}, rho={mann_weight}")

    v = initial.vectors.copy()
    history: List[float] = []
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        reflected = reflect_agents(StackedState(v), agents, iteration, executor)
        t_v = reflect_consensus(reflected).vectors
        v_next = (1.0 - mann_weight) * v + mann_weight * t_v

        residual = float(np.linalg.norm(v_next - v) / max(np.linalg.norm(v), EPS_MACH))
        history.append(residual)
        v = v_next
        logger.debug(f"iteration {iteration}: residual {residual:.6g}")

        if residual < tol:
            converged = True
            break

    solution = v.mean(axis=0)
    report = EquilibriumReport(
        solution=solution,
        tensions=v - solution[None, :],
        residual_history=history,
        iterations_used=iteration,
        converged=converged,
    )
    if converged:
        logger.debug(f"Converged after {iteration} iterations (residual {history[-1]:.6g})")
    else:
        logger.warning(f"No consensus after {iteration} iterations (residual {history[-1]:.6g})")
    return report


def verify_equilibrium(report: EquilibriumReport, agents: Sequence[AgentOp],
                       tol: float) -> EquilibriumDiagnostics:
    """Re-evaluate F_i(x* + u_i) and compare with x*; residuals are scaled by 1/sqrt(n)"""
    points = StackedState(report.agent_inputs())
    outputs = apply_agents(points, agents)
    root_n = np.sqrt(report.solution.size)

    agent_residuals = {}
    for agent, out in zip(agents, outputs):
        key = agent.name
        while key in agent_residuals:
            key += "'"
        agent_residuals[key] = float(np.linalg.norm(out - report.solution) / root_n)

    consensus_residual = float(np.linalg.norm(report.tensions.sum(axis=0)) / root_n)
    passed = consensus_residual <= tol and all(r <= tol for r in agent_residuals.values())
    return EquilibriumDiagnostics(agent_residuals, consensus_residual, tol, passed)


def check_firm_nonexpansiveness(agent: AgentOp, sampler: Callable[[], np.ndarray],
                                trials: int) -> float:
    """
    Largest observed ||F(x)-F(y)||^2 + ||(x-y)-(F(x)-F(y))||^2 - ||x-y||^2
    over sampled pairs; a value <= 0 (up to roundoff) certifies the samples.
    """
    if trials < 1:
        raise ParameterError(f"trials must be at least 1, got {trials}")

    worst = -np.inf
    for _ in range(trials):
        x = np.asarray(sampler(), dtype=np.float64)
        y = np.asarray(sampler(), dtype=np.float64)
        d_in = (x - y).ravel()
        d_out = (np.asarray(agent(x), dtype=np.float64) - np.asarray(agent(y), dtype=np.float64)).ravel()
        slack = d_out @ d_out + (d_in - d_out) @ (d_in - d_out) - d_in @ d_in
        worst = max(worst, float(slack))
    return worst
