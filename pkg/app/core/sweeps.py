"""
Parameter Sweeps
Delay, reliability and platoon sweeps over one scenario axis; each point is solved
independently and a failed point becomes a NaN row
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.delay_pgf import delay_moments, reliability, reliability_curve, transmission_profile
from app.core.edca_simulator import run_simulation
from app.core.errors import EDCAModelError
from app.core.fixed_point import solve_fixed_point
from app.core.platoon import contending_stations, stability_analysis
from app.models.scenario import NetworkScenario, PlatoonConfig, SimConfig, SolverOptions

logger = logging.getLogger(__name__)

DELAY_AXES = ("n_stations", "data_rate", "packet_bits", "lambda0", "lambda1")
DELAY_COLUMNS = ["x", "mean_ac0_ms", "mean_ac1_ms", "std_ac0_ms", "std_ac1_ms"]
PLATOON_COLUMNS = ["headway_m", "p_accept", "lambda0_pps", "tau_c_ms", "tau_cr_ms",
                   "mean_delay_ac0_ms", "mean_delay_ac1_ms", "stddev_ac0_ms", "stddev_ac1_ms",
                   "reliability_ac0", "reliability_ac1"]
SIM_COLUMNS = ["sim_mean_ac0_ms", "sim_mean_ac1_ms", "sim_stddev_ac0_ms", "sim_stddev_ac1_ms"]


def scenario_for(base: NetworkScenario, axis: str, value: float) -> NetworkScenario:
    """Copy of `base` with one sweep axis set to `value`"""
    if axis == "n_stations":
        return base.with_updates(n_stations=int(round(value)))
    if axis == "data_rate":
        return base.with_updates(phy={"data_rate": float(value)})
    if axis == "packet_bits":
        return base.with_updates(phy={"packet_payload": float(value)})
    if axis == "lambda0":
        return base.with_updates(rates=(float(value), None))
    if axis == "lambda1":
        return base.with_updates(rates=(None, float(value)))
    raise ValueError(f"unknown sweep axis '{axis}'")


def _map_ordered(func: Callable, items: Sequence, workers: int) -> List:
    """Apply func to every item, in parallel when asked; results keep the input order"""
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


def _delay_row(job) -> Dict:
    base, axis, value, options = job
    row = {"x": value}
    try:
        scenario = scenario_for(base, axis, value)
        solution = solve_fixed_point(scenario, options)
        ac0, ac1 = delay_moments(scenario, solution)
        row.update(mean_ac0_ms=ac0.mean * 1e3, mean_ac1_ms=ac1.mean * 1e3,
                   std_ac0_ms=ac0.stddev * 1e3, std_ac1_ms=ac1.stddev * 1e3)
        logger.info(f"Sweep point {axis}={value:g} done")
    except (EDCAModelError, ValueError) as e:
        logger.warning(f"Sweep point {axis}={value:g} failed, recording NaN: {e}")
        row.update({column: math.nan for column in DELAY_COLUMNS[1:]})
    return row


def delay_sweep(base: NetworkScenario, axis: str, values: Sequence[float],
                options: Optional[SolverOptions] = None, workers: int = 1) -> pd.DataFrame:
    """
    Mean and standard deviation of both access categories along one axis

    Args:
        base: Scenario every point starts from
        axis: One of DELAY_AXES
        values: Axis values, in output order
        options: Solver options
        workers: Worker processes for independent points

    Returns:
        pd.DataFrame: Columns x, mean_ac0_ms, mean_ac1_ms, std_ac0_ms, std_ac1_ms
    """
    if axis not in DELAY_AXES:
        raise ValueError(f"unknown sweep axis '{axis}', expected one of {DELAY_AXES}")
    options = options or SolverOptions()
    jobs = [(base, axis, float(v), options) for v in values]
    rows = _map_ordered(_delay_row, jobs, workers)
    return pd.DataFrame(rows, columns=DELAY_COLUMNS)


def tau_sweep(scenario: NetworkScenario, taus: Sequence[float],
              options: Optional[SolverOptions] = None) -> pd.DataFrame:
    """Reliability of both access categories against the deadline (taus in seconds)"""
    solution = solve_fixed_point(scenario, options)
    ac0, ac1 = delay_moments(scenario, solution)
    t_tr = transmission_profile(scenario).t_tr
    taus = np.asarray(taus, dtype=float)
    return pd.DataFrame({
        "tau_ms": taus * 1e3,
        "reliability_ac0": reliability_curve(ac0, t_tr, taus),
        "reliability_ac1": reliability_curve(ac1, t_tr, taus),
    })


def _platoon_row(job) -> Dict:
    base, platoon, index, y_star, options, sim_template, seed = job
    row = {"headway_m": y_star}
    columns = PLATOON_COLUMNS[1:] + (SIM_COLUMNS if sim_template is not None else [])
    try:
        rng = np.random.default_rng([seed, index])
        stability = stability_analysis(platoon, y_star, rng)
        if stability.tau_c <= 0:
            logger.warning(f"Headway {y_star} m has no positive critical delay; "
                           f"using tau_cr = 0 and reliability 0")
        n_stations = contending_stations(y_star, platoon.comm_range)
        scenario = base.with_updates(n_stations=n_stations, rates=(stability.lambda0, platoon.lambda1))
        solution = solve_fixed_point(scenario, options)
        ac0, ac1 = delay_moments(scenario, solution)
        t_tr = transmission_profile(scenario).t_tr
        row.update(
            p_accept=stability.p_accept,
            lambda0_pps=stability.lambda0,
            tau_c_ms=stability.tau_c * 1e3,
            tau_cr_ms=stability.tau_cr * 1e3,
            mean_delay_ac0_ms=ac0.mean * 1e3,
            mean_delay_ac1_ms=ac1.mean * 1e3,
            stddev_ac0_ms=ac0.stddev * 1e3,
            stddev_ac1_ms=ac1.stddev * 1e3,
            reliability_ac0=reliability(ac0, t_tr, stability.tau_cr),
            reliability_ac1=reliability(ac1, t_tr, stability.tau_cr),
        )
        if sim_template is not None:
            stats = run_simulation(sim_template.model_copy(update={"scenario": scenario}))
            row.update(
                sim_mean_ac0_ms=stats.per_ac[0].mean * 1e3,
                sim_mean_ac1_ms=stats.per_ac[1].mean * 1e3,
                sim_stddev_ac0_ms=stats.per_ac[0].stddev * 1e3,
                sim_stddev_ac1_ms=stats.per_ac[1].stddev * 1e3,
            )
        logger.info(f"Platoon point y*={y_star:g} m done (N_cs={n_stations}, lambda0={stability.lambda0:.4g})")
    except (EDCAModelError, ValueError) as e:
        logger.warning(f"Platoon point y*={y_star:g} m failed, recording NaN: {e}")
        row.update({column: math.nan for column in columns})
    return row


def platoon_sweep(base: NetworkScenario, platoon: PlatoonConfig, headways: Sequence[float],
                  options: Optional[SolverOptions] = None, simulation: Optional[SimConfig] = None,
                  seed: int = 1, workers: int = 1) -> pd.DataFrame:
    """
    Gap-acceptance-driven delay and reliability over equilibrium headways

    Every headway sets the number of contending stations and the AC0 rate; AC1 runs at
    the configured periodic rate. With `simulation` the simulator runs on each point's
    scenario and its columns are appended.
    """
    options = options or SolverOptions()
    jobs = [(base, platoon, index, float(y), options, simulation, seed) for index, y in enumerate(headways)]
    rows = _map_ordered(_platoon_row, jobs, workers)
    columns = PLATOON_COLUMNS + (SIM_COLUMNS if simulation is not None else [])
    return pd.DataFrame(rows, columns=columns)
