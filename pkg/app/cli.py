"""
Command-line front end
Runs analyses, sweeps, simulations and platoon studies from a scenario configuration
and writes the results as CSV
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from app.core.delay_pgf import (
    moments_from_pgf,
    reliability,
    service_distributions,
    transmission_profile,
)
from app.core.edca_simulator import run_simulation
from app.core.errors import ConfigError, EDCAModelError, SimulationError
from app.core.fixed_point import solve_fixed_point
from app.core.platoon import (
    characteristic_roots,
    integrate_platoon,
    is_non_oscillatory,
    stability_analysis,
)
from app.core.sweeps import DELAY_AXES, delay_sweep, platoon_sweep, tau_sweep
from app.utils.config_loader import LoadedConfig, dump_config, load_config
from app.utils.helpers import axis_values, format_ms, setup_logging, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SIMULATION = 4

SWEEP_AXES = DELAY_AXES + ("headway", "tau")
DEFAULT_HEADWAYS = np.arange(2.0, 11.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario configuration document (JSON)")
    common.add_argument("--out", default="results", help="Output directory")
    common.add_argument("--log-level", help="Logging level (default: $LOG_LEVEL or INFO)")
    common.add_argument("--workers", type=int, default=1, help="Worker processes for independent points")

    sim_flags = argparse.ArgumentParser(add_help=False)
    sim_flags.add_argument("--seed", type=int, help="Base random seed")
    sim_flags.add_argument("--runs", type=int, help="Independent simulation runs")
    sim_flags.add_argument("--duration", type=float, help="Simulated seconds per run")

    range_flags = argparse.ArgumentParser(add_help=False)
    range_flags.add_argument("--from", dest="start", type=float, help="First axis value")
    range_flags.add_argument("--to", dest="stop", type=float, help="Last axis value")
    range_flags.add_argument("--steps", type=int, help="Number of axis points")
    range_flags.add_argument("--values", type=float, nargs="+", help="Explicit axis values")
    range_flags.add_argument("--log-spaced", action="store_true", help="Geometric axis spacing")

    platoon_flags = argparse.ArgumentParser(add_help=False)
    platoon_flags.add_argument("--kappa-mode", choices=["deterministic", "sampled"])
    platoon_flags.add_argument("--mapping", choices=["linear", "log"],
                               help="Rate mapping; both mappings when omitted")

    parser = argparse.ArgumentParser(
        prog="edca",
        description="EDCA-with-repetitions delay analysis, simulation and platoon stability",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", parents=[common], help="Solve one scenario")
    analyze.add_argument("--tau", type=float, nargs="+", default=[], help="Reliability deadlines in ms")
    analyze.add_argument("--dump-config", action="store_true", help="Write the effective configuration")
    analyze.add_argument("--distribution", action="store_true", help="Export service-time distributions")

    sweep = commands.add_parser("sweep", parents=[common, range_flags, sim_flags, platoon_flags],
                                help="Sweep one axis")
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--simulate", action="store_true", help="Append simulator columns (headway axis)")

    commands.add_parser("simulate", parents=[common, sim_flags], help="Run the discrete-event simulator")

    platoon = commands.add_parser("platoon", parents=[common, range_flags, sim_flags, platoon_flags],
                                  help="Headway sweep of the platoon application")
    platoon.add_argument("--simulate", action="store_true", help="Append simulator columns")

    stability = commands.add_parser("stability", parents=[common, platoon_flags],
                                    help="Critical delay and root classification for one headway")
    stability.add_argument("--headway", type=float, help="Equilibrium headway in m (default: y_m)")
    stability.add_argument("--trajectory", action="store_true", help="Write a perturbed trajectory")
    stability.add_argument("--horizon", type=float, default=30.0, help="Trajectory length in s")
    return parser


def _with_overrides(config: LoadedConfig, args: argparse.Namespace) -> LoadedConfig:
    sim_updates = {}
    for flag, name in (("seed", "rng_seed"), ("runs", "runs"), ("duration", "sim_duration")):
        value = getattr(args, flag, None)
        if value is not None:
            sim_updates[name] = value
    platoon = config.platoon
    kappa_mode = getattr(args, "kappa_mode", None)
    if kappa_mode:
        platoon = platoon.model_copy(update={"kappa_mode": kappa_mode})
    sim = config.sim
    if sim_updates:
        try:
            sim = type(sim).model_validate({**sim.model_dump(), **sim_updates})
        except ValueError as e:
            raise ConfigError(f"invalid simulation override: {e}") from e
    return LoadedConfig(scenario=config.scenario, sim=sim, platoon=platoon, source=config.source)


def _mappings(args: argparse.Namespace) -> List[str]:
    if getattr(args, "mapping", None):
        return ["logarithmic" if args.mapping == "log" else "linear"]
    return ["linear", "logarithmic"]


def cmd_analyze(config: LoadedConfig, args: argparse.Namespace, out: Path) -> int:
    scenario = config.scenario
    solution = solve_fixed_point(scenario)
    profile = transmission_profile(scenario)
    dist0, dist1 = service_distributions(scenario, solution)
    moments = (moments_from_pgf(dist0), moments_from_pgf(dist1))

    print(f"Scenario: N_cs={scenario.n_stations}, R_d={scenario.phy.data_rate:g} bps, "
          f"P={scenario.phy.packet_payload:g} bits")
    print(f"T_tr={format_ms(profile.t_tr)}, E[P]={profile.mean_packet_bits:.6g} bits, "
          f"p(Z)={', '.join(f'{p:.6g}' for p in solution.z.probs)}")
    print(f"Converged in {solution.iterations} iterations (residual {solution.residual:.3e})")
    print(f"  omega={solution.omega}, beta={solution.beta}")
    print(f"  p_b={solution.p_busy}, p_ex={solution.p_ext_single:.6g}, p_o={solution.p_ext:.6g}, "
          f"p_c1={solution.p_coll_ac1:.6g}, rho={solution.rho}")
    for index, m in enumerate(moments):
        print(f"  AC{index}: mean={format_ms(m.mean)}, stddev={format_ms(m.stddev)}")

    out.mkdir(parents=True, exist_ok=True)
    solution_rows = []
    for key, value in solution.to_dict().items():
        if isinstance(value, (list, tuple)):
            solution_rows.extend((f"{key}_{i}", v) for i, v in enumerate(value))
        else:
            solution_rows.append((key, value))
    write_csv(pd.DataFrame(solution_rows, columns=["quantity", "value"]), out / "solution.csv")
    write_csv(pd.DataFrame({
        "ac": [0, 1],
        "mean_ms": [m.mean * 1e3 for m in moments],
        "stddev_ms": [m.stddev * 1e3 for m in moments],
    }), out / "delay_moments.csv")

    if args.tau:
        rows = [{"tau_ms": tau,
                 "reliability_ac0": reliability(moments[0], profile.t_tr, tau / 1e3),
                 "reliability_ac1": reliability(moments[1], profile.t_tr, tau / 1e3)} for tau in args.tau]
        for row in rows:
            print(f"  R(tau={row['tau_ms']:g} ms): AC0={row['reliability_ac0']:.6g}, "
                  f"AC1={row['reliability_ac1']:.6g}")
        write_csv(pd.DataFrame(rows), out / "reliability.csv")
    if args.distribution:
        write_csv(dist0.to_frame(), out / "service_time_ac0.csv")
        write_csv(dist1.to_frame(), out / "service_time_ac1.csv")
    if args.dump_config:
        dump_config(config, out / "scenario.json")
    return EXIT_OK


def _headway_sweep(config: LoadedConfig, args: argparse.Namespace, out: Path, headways) -> int:
    simulation = config.sim if args.simulate else None
    for mapping in _mappings(args):
        gap = config.platoon.gap.model_copy(update={"mapping": mapping})
        platoon = config.platoon.model_copy(update={"gap": gap})
        frame = platoon_sweep(config.scenario, platoon, headways, simulation=simulation,
                              seed=config.sim.rng_seed, workers=args.workers)
        write_csv(frame, out / f"platoon_{mapping}.csv")
    return EXIT_OK


def _axis(args: argparse.Namespace, default=None) -> np.ndarray:
    if args.values is None and args.start is None and default is not None:
        return np.asarray(default, dtype=float)
    return axis_values(args.start, args.stop, args.steps, args.log_spaced, args.values)


def cmd_sweep(config: LoadedConfig, args: argparse.Namespace, out: Path) -> int:
    if args.axis == "headway":
        return _headway_sweep(config, args, out, _axis(args, DEFAULT_HEADWAYS))
    if args.simulate:
        raise ConfigError(f"--simulate needs --axis headway, got --axis {args.axis}", key="simulate")
    values = _axis(args)
    if args.axis == "tau":
        frame = tau_sweep(config.scenario, values / 1e3)
    else:
        frame = delay_sweep(config.scenario, args.axis, values, workers=args.workers)
    write_csv(frame, out / f"sweep_{args.axis}.csv")
    return EXIT_OK


def cmd_platoon(config: LoadedConfig, args: argparse.Namespace, out: Path) -> int:
    return _headway_sweep(config, args, out, _axis(args, DEFAULT_HEADWAYS))


def cmd_simulate(config: LoadedConfig, args: argparse.Namespace, out: Path) -> int:
    stats = run_simulation(config.sim, workers=args.workers)
    rows = []
    for label, run_stats in [(str(i), s) for i, s in enumerate(stats.per_run)] + [("all", stats)]:
        for ac, ac_stats in enumerate(run_stats.per_ac):
            rows.append({
                "run": label,
                "ac": ac,
                "n_samples": ac_stats.n_samples,
                "mean_ms": ac_stats.mean * 1e3,
                "stddev_ms": ac_stats.stddev * 1e3,
                "internal_collisions": ac_stats.internal_collisions,
                "external_collisions": ac_stats.external_collisions,
                "drops": ac_stats.drops,
            })
    for ac, ac_stats in enumerate(stats.per_ac):
        print(f"AC{ac}: n={ac_stats.n_samples}, mean={format_ms(ac_stats.mean)}, "
              f"stddev={format_ms(ac_stats.stddev)}, drops={ac_stats.drops}")
    total = sum(stats.z_counts) or 1
    print(f"Copies per burst: {', '.join(f'{c / total:.4f}' for c in stats.z_counts)}")
    write_csv(pd.DataFrame(rows), out / "simulation.csv")
    return EXIT_OK


def cmd_stability(config: LoadedConfig, args: argparse.Namespace, out: Path) -> int:
    platoon = config.platoon
    if args.mapping:
        gap = platoon.gap.model_copy(update={"mapping": _mappings(args)[0]})
        platoon = platoon.model_copy(update={"gap": gap})
    y_star = args.headway if args.headway is not None else platoon.fvd.y_m
    rng = np.random.default_rng(config.sim.rng_seed)
    result = stability_analysis(platoon, y_star, rng)
    print(f"y*={y_star:g} m: V'={result.v_prime:.6g}/s, d~={result.d_tilde:.6g}/s, "
          f"sigma={result.sigma_root:.6g}/s (other root {result.sigma_other:.6g}/s)")
    print(f"tau_C={format_ms(result.tau_c)}, kappa={result.kappa:.4g}, tau_cr={format_ms(result.tau_cr)}")
    print(f"P_accept={result.p_accept:.6g}, lambda0={result.lambda0:.6g} pkts/s")

    rows = [{"quantity": key, "value": value} for key, value in result.to_dict().items()]
    if result.tau_c > 0:
        for factor in (0.5, 1.5):
            tau = factor * result.tau_c
            fvd = platoon.fvd.model_copy(update={"tau": tau})
            roots = characteristic_roots(fvd, y_star, tau)
            regime = "non-oscillatory" if is_non_oscillatory(fvd, y_star, tau) else "oscillatory"
            print(f"  tau={factor:g} tau_C: rightmost roots {np.round(roots[:3], 6)} -> {regime}")
            rows.append({"quantity": f"non_oscillatory_{factor:g}tau_c", "value": float(regime == "non-oscillatory")})
    write_csv(pd.DataFrame(rows), out / "stability.csv")

    if args.trajectory:
        fvd = platoon.fvd
        trajectory = integrate_platoon(fvd, y_star, args.horizon, perturbation=1e-3 * y_star)
        frame = pd.DataFrame(trajectory.headways, columns=[f"headway_{i + 1}_m" for i in range(fvd.n_vehicles)])
        frame.insert(0, "time_s", trajectory.times)
        write_csv(frame, out / "trajectory.csv")
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "platoon": cmd_platoon,
    "stability": cmd_stability,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        config = _with_overrides(load_config(args.config), args)
        return COMMANDS[args.command](config, args, Path(args.out))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except SimulationError as e:
        logger.error(f"Simulation error: {e}")
        return EXIT_SIMULATION
    except EDCAModelError as e:
        logger.error(f"Solver error: {e}")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
