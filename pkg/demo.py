#!/usr/bin/env python3
"""
Demo script for the EDCA Repetition Delay Analyzer
This script demonstrates how to use the analytical model, the simulator and the platoon analysis
"""

import os
import sys
import logging

# Add the project root to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.core.delay_pgf import delay_moments, reliability, transmission_profile
from app.core.edca_simulator import run_simulation
from app.core.errors import EDCAModelError
from app.core.fixed_point import solve_fixed_point
from app.core.platoon import stability_analysis
from app.models.scenario import NetworkScenario, PlatoonConfig, SimConfig

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def demo_analysis():
    """Solve the default scenario and its legacy single-copy counterpart"""

    print("🚀 EDCA Repetition Delay Analyzer Demo")
    print("=" * 50)

    scenario = NetworkScenario()
    print(f"\n📐 Solving N_cs={scenario.n_stations}, R_d={scenario.phy.data_rate / 1e6:g} Mbps...")
    try:
        solution = solve_fixed_point(scenario)
        ac0, ac1 = delay_moments(scenario, solution)
    except EDCAModelError as e:
        print(f"❌ Analysis failed: {e}")
        return None

    print(f"✅ Converged after {solution.iterations} iterations")
    print(f"   p(Z) = {', '.join(f'{p:.4f}' for p in solution.z.probs)}")
    print(f"   AC0: mean {ac0.mean * 1e3:.4f} ms, stddev {ac0.stddev * 1e3:.4f} ms")
    print(f"   AC1: mean {ac1.mean * 1e3:.4f} ms, stddev {ac1.stddev * 1e3:.4f} ms")

    t_tr = transmission_profile(scenario).t_tr
    for tau_ms in (1.0, 2.0, 5.0):
        print(f"   R(tau={tau_ms:g} ms): AC0 >= {reliability(ac0, t_tr, tau_ms / 1e3):.4f}")

    legacy = scenario.legacy()
    legacy_ac0, _ = delay_moments(legacy, solve_fixed_point(legacy))
    print(f"\n📡 Single-copy AC0 mean: {legacy_ac0.mean * 1e3:.4f} ms")
    return scenario


def demo_simulation(scenario: NetworkScenario):
    """Compare the analytical means against a short simulation"""

    print("\n🎲 Running a 2 s simulation...")
    try:
        stats = run_simulation(SimConfig(scenario=scenario, sim_duration=2.0, rng_seed=7))
    except EDCAModelError as e:
        print(f"❌ Simulation failed: {e}")
        return
    for index, ac in enumerate(stats.per_ac):
        print(f"   AC{index}: {ac.n_samples} packets, mean {ac.mean * 1e3:.4f} ms, drops {ac.drops}")


def demo_platoon():
    """Critical delay and packet rate over a few headways"""

    print("\n🚙 Platoon stability")
    config = PlatoonConfig()
    for headway in (3.0, 5.0, 8.0):
        try:
            result = stability_analysis(config, headway)
        except EDCAModelError as e:
            print(f"   y*={headway:g} m: ❌ {e}")
            continue
        print(f"   y*={headway:g} m: tau_C={result.tau_c * 1e3:.1f} ms, tau_cr={result.tau_cr * 1e3:.1f} ms, "
              f"lambda0={result.lambda0:.2f} pkts/s")


if __name__ == "__main__":
    scenario = demo_analysis()
    if scenario is not None:
        demo_simulation(scenario)
    demo_platoon()
    print("\n🎉 Demo completed!")
