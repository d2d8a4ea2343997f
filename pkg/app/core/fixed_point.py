"""
EDCA Fixed-Point Solver
Solves the coupled transmission/collision equations of both access categories together
with the utilization feedback rho_i = lambda_i * T_Si
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from app.core import edca_model
from app.core.delay_pgf import service_mean
from app.core.errors import ConvergenceError, DivergenceError, EDCAModelError
from app.models.results import FixedPointSolution
from app.models.scenario import NetworkScenario, SolverOptions

logger = logging.getLogger(__name__)


class EDCAFixedPointSolver:
    """Damped fixed-point iteration over the utilizations, with an inner solve for omega"""

    def __init__(self, scenario: NetworkScenario, options: Optional[SolverOptions] = None):
        """
        Initialize the solver

        Args:
            scenario: Network and protocol parameters
            options: Tolerances, damping and iteration limits
        """
        self.scenario = scenario
        self.options = options or SolverOptions()
        self.z = edca_model.z_distribution(scenario.detection)
        self.p_arrival = tuple(edca_model.arrival_probability(ac.arrival, scenario.phy.slot_time)
                                for ac in scenario.ac)
        self.active = tuple(ac.arrival.kind == "saturated" or ac.arrival.rate > 0 for ac in scenario.ac)
        self.windows = tuple(edca_model.cw_schedule(ac, 0) for ac in scenario.ac)
        self.doublings = edca_model.doubling_limit(scenario.ac[1])

    def _collision_state(self, omega: Tuple[float, float]) -> dict:
        """Busy and collision probabilities implied by the internal transmission probabilities"""
        n = self.scenario.n_stations
        omega0, omega1 = omega
        beta = (omega0, omega1 * (1.0 - omega0))
        p_ext_single, p_ext = edca_model.external_collision(beta[0] + beta[1], n, self.z)
        p_internal = edca_model.internal_collision(omega0)
        return {
            "beta": beta,
            "p_busy": (edca_model.busy_probability(beta, n, 0),
                       edca_model.busy_probability(beta, n, 1, omega0)),
            "p_ext_single": p_ext_single,
            "p_ext": p_ext,
            "p_internal": p_internal,
            "p_coll_ac1": p_internal[1] + (1.0 - p_internal[1]) * p_ext,
        }

    def _omega_map(self, omega: Tuple[float, float], rho: Tuple[float, float]) -> Tuple[float, float]:
        state = self._collision_state(omega)
        ac1 = self.scenario.ac[1]
        omega0 = omega1 = 0.0
        if self.active[0]:
            omega0 = edca_model.omega_ac0(self.windows[0], state["p_busy"][0], rho[0], self.p_arrival[0])
        if self.active[1]:
            omega1 = edca_model.omega_ac1(self.windows[1], self.doublings, ac1.retry_limit,
                                          state["p_coll_ac1"], state["p_busy"][1], rho[1],
                                          self.p_arrival[1])
        return omega0, omega1

    def initial_omega(self, rho: Tuple[float, float]) -> Tuple[float, float]:
        """omega seeded from the idle-channel, collision-free closed forms"""
        return self._omega_map((0.0, 0.0), rho)

    def solve_omega(self, rho: Tuple[float, float], start: Tuple[float, float]) -> Tuple[float, float]:
        """
        Solve omega = G(omega) for fixed utilizations

        Steffensen acceleration is tried first; plain damped iteration takes over when the
        accelerated iterate leaves the unit square or fails to converge.
        """
        damping = self.options.damping

        def damped(x):
            updated = self._omega_map((float(x[0]), float(x[1])), rho)
            return (1.0 - damping) * x + damping * np.asarray(updated)

        x0 = np.asarray(start, dtype=float)
        try:
            result = optimize.fixed_point(damped, x0, xtol=self.options.inner_tolerance,
                                          maxiter=self.options.inner_max_iterations, method="del2")
            if np.all(np.isfinite(result)) and np.all((result >= 0.0) & (result <= 1.0)):
                return float(result[0]), float(result[1])
            logger.debug(f"Accelerated omega solve left the unit square: {result}")
        except (RuntimeError, EDCAModelError, ZeroDivisionError, OverflowError) as e:
            logger.debug(f"Accelerated omega solve failed, falling back to plain iteration: {e}")

        try:
            result = optimize.fixed_point(damped, x0, xtol=self.options.inner_tolerance,
                                          maxiter=self.options.inner_max_iterations, method="iteration")
        except RuntimeError as e:
            raise ConvergenceError(f"omega did not converge for rho={rho}: {e}",
                                   residual=float("nan"),
                                   iterations=self.options.inner_max_iterations) from e
        return float(result[0]), float(result[1])

    def assemble(self, omega: Tuple[float, float], rho: Tuple[float, float],
                 iterations: int = 0, residual: float = float("nan")) -> FixedPointSolution:
        state = self._collision_state(omega)
        solution = FixedPointSolution(omega=omega, rho=rho, p_arrival=self.p_arrival, z=self.z,
                                      iterations=iterations, residual=residual, **state)
        self._check_bounds(solution)
        return solution

    def _check_bounds(self, solution: FixedPointSolution):
        slack = self.options.bound_slack
        values = {
            "omega0": solution.omega[0], "omega1": solution.omega[1],
            "beta0": solution.beta[0], "beta1": solution.beta[1],
            "p_b0": solution.p_busy[0], "p_b1": solution.p_busy[1],
            "p_ex": solution.p_ext_single, "p_o": solution.p_ext,
            "p_v1": solution.p_internal[1], "p_c1": solution.p_coll_ac1,
            "rho0": solution.rho[0], "rho1": solution.rho[1],
        }
        for name, value in values.items():
            if not (-slack <= value <= 1.0 + slack):
                raise DivergenceError(f"{name}={value:.6g} left [0, 1]", quantity=name, value=value)

    def utilization(self, solution: FixedPointSolution) -> Tuple[float, float]:
        """rho_i = min(1, lambda_i * T_Si); saturated queues are always busy"""
        rho = []
        for index, ac in enumerate(self.scenario.ac):
            if ac.arrival.kind == "saturated":
                rho.append(1.0)
            elif ac.arrival.rate == 0:
                rho.append(0.0)
            else:
                rho.append(min(1.0, ac.arrival.rate * service_mean(self.scenario, solution, index)))
        return rho[0], rho[1]

    def solve(self) -> FixedPointSolution:
        """
        Run the damped utilization iteration to convergence

        Returns:
            FixedPointSolution: Probabilities computed with the returned rho, whose residual
            |rho_computed - rho| is within tolerance

        Raises:
            ConvergenceError: Iteration budget exhausted
            DivergenceError: A probability left [0, 1]
        """
        opts = self.options
        rho = tuple(
            1.0 if ac.arrival.kind == "saturated" else (guess if self.active[i] else 0.0)
            for i, (ac, guess) in enumerate(zip(self.scenario.ac, opts.initial_rho))
        )
        omega = self.initial_omega(rho)
        residual = float("inf")

        for iteration in range(1, opts.max_iterations + 1):
            omega = self.solve_omega(rho, omega)
            solution = self.assemble(omega, rho)
            computed = self.utilization(solution)
            residual = max(abs(c - r) for c, r in zip(computed, rho))
            logger.debug(f"Iteration {iteration}: rho={rho}, computed={computed}, residual={residual:.3e}")

            if residual <= opts.tolerance:
                logger.info(f"Fixed point converged after {iteration} iterations "
                            f"(N={self.scenario.n_stations}, residual={residual:.2e})")
                return self.assemble(omega, rho, iterations=iteration, residual=residual)

            rho = tuple((1.0 - opts.damping) * r + opts.damping * c for r, c in zip(rho, computed))

        raise ConvergenceError("utilization iteration did not converge", residual=residual,
                               iterations=opts.max_iterations)


def solve_fixed_point(scenario: NetworkScenario, options: Optional[SolverOptions] = None) -> FixedPointSolution:
    return EDCAFixedPointSolver(scenario, options).solve()


def consistency_residual(scenario: NetworkScenario, solution: FixedPointSolution) -> float:
    """
    Largest discrepancy between the returned fields and the model equations re-evaluated
    from those same fields
    """
    solver = EDCAFixedPointSolver(scenario)
    recomputed = solver._collision_state(solution.omega)
    omega = solver._omega_map(solution.omega, solution.rho)
    pairs = [
        (omega[0], solution.omega[0]), (omega[1], solution.omega[1]),
        (recomputed["beta"][0], solution.beta[0]), (recomputed["beta"][1], solution.beta[1]),
        (recomputed["p_busy"][0], solution.p_busy[0]), (recomputed["p_busy"][1], solution.p_busy[1]),
        (recomputed["p_ext_single"], solution.p_ext_single), (recomputed["p_ext"], solution.p_ext),
        (recomputed["p_internal"][1], solution.p_internal[1]),
        (recomputed["p_coll_ac1"], solution.p_coll_ac1),
    ]
    return max(abs(a - b) for a, b in pairs)


def rho_step(scenario: NetworkScenario, solution: FixedPointSolution) -> float:
    """Change in rho one more utilization iteration would make"""
    computed = EDCAFixedPointSolver(scenario).utilization(solution)
    return max(abs(c - r) for c, r in zip(computed, solution.rho))
