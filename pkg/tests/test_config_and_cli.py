"""
Unit tests for the configuration loader, the helpers and the command-line front end
"""

import json
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.cli import EXIT_CONFIG, EXIT_OK, EXIT_SIMULATION, EXIT_SOLVER, main
from app.core.errors import ConfigError, ConvergenceError, SimulationError
from app.utils.config_loader import (
    CONFIG_DIR_ENV,
    LoadedConfig,
    config_to_document,
    load_config,
    parse_config,
)
from app.utils.helpers import axis_values, format_ms


class TestConfigParser(unittest.TestCase):
    """Test cases for parse_config and load_config"""

    def test_empty_document_gives_defaults(self):
        config = parse_config("")
        self.assertEqual(config.scenario.n_stations, 100)
        self.assertEqual(config.sim.rng_seed, 1)

    def test_microsecond_fields(self):
        config = parse_config('{"slot_time_us": 9, "sifs_us": 16, "grid_resolution_us": 2}')
        phy = config.scenario.phy
        self.assertEqual(phy.slot_time, 9e-6)
        self.assertEqual(phy.sifs, 16e-6)
        self.assertEqual(config.scenario.grid_resolution, 2e-6)
        self.assertIsNone(config.scenario.ac[0].arrival.interval)
        self.assertEqual(config.scenario.arrival_interval(0), 9e-6)

    def test_access_category_block(self):
        text = json.dumps({"n_stations": 20, "ac0": {"rate_pps": 10, "arrival_kind": "periodic"},
                           "ac1": {"retry_limit": 1}})
        scenario = parse_config(text).scenario
        self.assertEqual(scenario.n_stations, 20)
        self.assertEqual(scenario.ac[0].arrival.kind, "periodic")
        self.assertEqual(scenario.ac[0].arrival.rate, 10)
        self.assertEqual(scenario.ac[1].retry_limit, 1)
        self.assertEqual(scenario.ac[1].cw_max, 31)

    def test_platoon_block(self):
        text = json.dumps({"platoon": {"a": 1.0, "l": 0.0, "comm_range_m": 200,
                                       "kappa_mode": "sampled", "gap": {"mapping": "log"}}})
        platoon = parse_config(text).platoon
        self.assertEqual(platoon.fvd.a, 1.0)
        self.assertEqual(platoon.fvd.l, 0.0)
        self.assertEqual(platoon.comm_range, 200)
        self.assertEqual(platoon.kappa_mode, "sampled")
        self.assertEqual(platoon.gap.mapping, "logarithmic")

    def test_unknown_key_reports_line(self):
        text = '{\n  "n_stations": 10,\n  "ac0": {\n    "bogus": 1\n  }\n}'
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.key, "ac0.bogus")
        self.assertEqual(ctx.exception.line, 4)
        self.assertIn("line 4", str(ctx.exception))

    def test_invalid_json_reports_line(self):
        text = '{\n  "n_stations": 10,\n  "p_decode": \n}'
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.line, 4)

    def test_out_of_range_value(self):
        text = '{\n  "n_stations": 0\n}'
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.key, "n_stations")
        self.assertEqual(ctx.exception.line, 2)

    def test_invalid_window_bounds(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('{"ac1": {"cw_min": 15, "cw_max": 40}}')
        self.assertTrue(ctx.exception.key.startswith("ac1"))

    def test_error_line_follows_full_key(self):
        text = ('{\n  "ac0": {\n    "cw_max": 15\n  },\n'
                '  "ac1": {\n    "cw_min": 15,\n    "cw_max": 0\n  }\n}')
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.key, "ac1.cw_max")
        self.assertEqual(ctx.exception.line, 7)

    def test_simulation_block_keys(self):
        config = parse_config('{"sim": {"duration_s": 3, "seed": 9, "runs": 2}}')
        self.assertEqual(config.sim.sim_duration, 3)
        self.assertEqual(config.sim.rng_seed, 9)
        self.assertEqual(config.sim.runs, 2)
        self.assertEqual(config.sim.scenario, config.scenario)
        with self.assertRaises(ConfigError) as ctx:
            parse_config('{"sim": {"duration": 3}}')
        self.assertEqual(ctx.exception.key, "sim.duration")

    def test_document_reproduces_configuration(self):
        original = parse_config(json.dumps({
            "n_stations": 42, "data_rate_bps": 6e6, "p_preamble": 0.7,
            "ac0": {"rate_pps": 20}, "sim": {"duration_s": 2.5, "seed": 3},
            "platoon": {"v0": 12.0, "gap": {"mapping": "logarithmic", "eta": 25}},
        }))
        reparsed = parse_config(json.dumps(config_to_document(original)))
        self.assertEqual(reparsed.scenario, original.scenario)
        self.assertEqual(reparsed.sim, original.sim)
        self.assertEqual(reparsed.platoon, original.platoon)

    def test_config_directory_from_environment(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "scenario.json").write_text('{"n_stations": 7}', encoding="utf-8")
            Path(tmp, "other.json").write_text('{"n_stations": 8}', encoding="utf-8")
            with patch.dict(os.environ, {CONFIG_DIR_ENV: tmp}):
                self.assertEqual(load_config().scenario.n_stations, 7)
                self.assertEqual(load_config("other.json").scenario.n_stations, 8)

    def test_defaults_without_document(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_config()
        self.assertIsInstance(config, LoadedConfig)
        self.assertIsNone(config.source)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/scenario.json")


class TestHelpers(unittest.TestCase):
    """Test cases for helper utilities"""

    def test_linear_axis(self):
        self.assertTrue(np.allclose(axis_values(1.0, 3.0, 3), [1.0, 2.0, 3.0]))

    def test_log_axis(self):
        self.assertTrue(np.allclose(axis_values(1.0, 100.0, 3, log_spaced=True), [1.0, 10.0, 100.0]))

    def test_explicit_values_win(self):
        self.assertEqual(axis_values(1.0, 3.0, 3, values=[5, 6]).tolist(), [5.0, 6.0])

    def test_axis_errors(self):
        with self.assertRaises(ConfigError):
            axis_values()
        with self.assertRaises(ConfigError):
            axis_values(1.0, 2.0, 0)
        with self.assertRaises(ConfigError):
            axis_values(0.0, 2.0, 3, log_spaced=True)
        with self.assertRaises(ConfigError):
            axis_values(values=[1.0, float("nan")])
        with self.assertRaises(ConfigError):
            axis_values(values=[])

    def test_format_ms(self):
        self.assertEqual(format_ms(1.5e-3), "1.5 ms")
        self.assertEqual(format_ms(float("nan")), "nan")


class TestCommandLine(unittest.TestCase):
    """Test cases for the edca command"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.out = self.root / "out"

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, document) -> str:
        path = self.root / "scenario.json"
        path.write_text(document if isinstance(document, str) else json.dumps(document), encoding="utf-8")
        return str(path)

    def run_cli(self, *argv) -> int:
        return main([*argv, "--out", str(self.out), "--log-level", "WARNING"])

    def test_malformed_config(self):
        config = self.write_config('{"n_stations": 10,,}')
        self.assertEqual(self.run_cli("analyze", "--config", config), EXIT_CONFIG)
        self.assertFalse(self.out.exists())

    def test_analyze_isolated_station(self):
        config = self.write_config({"n_stations": 1, "p_preamble": 1.0, "p_decode": 1.0})
        code = self.run_cli("analyze", "--config", config, "--tau", "1", "5", "--dump-config")
        self.assertEqual(code, EXIT_OK)
        solution = pd.read_csv(self.out / "solution.csv").set_index("quantity")["value"]
        self.assertEqual(solution["p_ext"], 0.0)
        self.assertEqual(solution["z_0"], 1.0)
        moments = pd.read_csv(self.out / "delay_moments.csv")
        self.assertEqual(moments["ac"].tolist(), [0, 1])
        self.assertTrue((moments["mean_ms"] > 0).all())
        reliability = pd.read_csv(self.out / "reliability.csv")
        self.assertEqual(reliability["tau_ms"].tolist(), [1.0, 5.0])
        self.assertTrue((reliability["reliability_ac0"] >= reliability["reliability_ac1"]).all())
        dumped = load_config(str(self.out / "scenario.json"))
        self.assertEqual(dumped.scenario.n_stations, 1)

    def test_analyze_distribution_export(self):
        config = self.write_config({"n_stations": 5})
        self.assertEqual(self.run_cli("analyze", "--config", config, "--distribution"), EXIT_OK)
        for ac in (0, 1):
            frame = pd.read_csv(self.out / f"service_time_ac{ac}.csv")
            self.assertEqual(list(frame.columns), ["time_us", "probability"])
            self.assertAlmostEqual(frame["probability"].sum(), 1.0, places=4)

    def test_sweep_values(self):
        config = self.write_config({})
        code = self.run_cli("sweep", "--config", config, "--axis", "n_stations", "--values", "10", "20", "30")
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(self.out / "sweep_n_stations.csv")
        self.assertEqual(len(frame), 3)
        self.assertEqual(frame["x"].tolist(), [10, 20, 30])

    def test_tau_sweep_range(self):
        code = self.run_cli("sweep", "--axis", "tau", "--from", "0", "--to", "10", "--steps", "11")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(pd.read_csv(self.out / "sweep_tau.csv")), 11)

    def test_sweep_without_axis_values(self):
        self.assertEqual(self.run_cli("sweep", "--axis", "data_rate"), EXIT_CONFIG)

    def test_simulate_flag_needs_headway_axis(self):
        code = self.run_cli("sweep", "--axis", "n_stations", "--values", "10", "20", "--simulate")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertFalse((self.out / "sweep_n_stations.csv").exists())

    def test_unknown_axis_rejected(self):
        with self.assertRaises(SystemExit):
            self.run_cli("sweep", "--axis", "colour")

    def test_solver_failure_exit_code(self):
        failure = ConvergenceError("fixed point did not converge", residual=0.5, iterations=10)
        with patch("app.cli.solve_fixed_point", side_effect=failure):
            self.assertEqual(self.run_cli("analyze"), EXIT_SOLVER)

    def test_simulation_failure_exit_code(self):
        with patch("app.cli.run_simulation", side_effect=SimulationError("no station fired")):
            self.assertEqual(self.run_cli("simulate"), EXIT_SIMULATION)

    def test_invalid_simulation_override(self):
        self.assertEqual(self.run_cli("simulate", "--duration", "-1"), EXIT_CONFIG)

    def test_simulation_is_reproducible(self):
        config = self.write_config({"n_stations": 5})
        argv = ("simulate", "--config", config, "--duration", "0.3", "--seed", "5", "--runs", "2")
        self.assertEqual(self.run_cli(*argv), EXIT_OK)
        first = (self.out / "simulation.csv").read_bytes()
        self.assertEqual(self.run_cli(*argv), EXIT_OK)
        self.assertEqual((self.out / "simulation.csv").read_bytes(), first)
        frame = pd.read_csv(self.out / "simulation.csv")
        self.assertEqual(len(frame), 6)
        self.assertEqual(frame["run"].astype(str).tolist(), ["0", "0", "1", "1", "all", "all"])

    def test_platoon_single_mapping(self):
        code = self.run_cli("platoon", "--mapping", "log", "--values", "3", "5")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(sorted(os.listdir(self.out)), ["platoon_logarithmic.csv"])
        self.assertEqual(len(pd.read_csv(self.out / "platoon_logarithmic.csv")), 2)

    def test_stability_report(self):
        code = self.run_cli("stability", "--headway", "5", "--trajectory", "--horizon", "1")
        self.assertEqual(code, EXIT_OK)
        report = pd.read_csv(self.out / "stability.csv").set_index("quantity")["value"]
        self.assertGreater(report["tau_c"], 0.0)
        self.assertIn("non_oscillatory_0.5tau_c", report.index)
        trajectory = pd.read_csv(self.out / "trajectory.csv")
        self.assertEqual(list(trajectory.columns)[0], "time_s")
        self.assertEqual(trajectory.shape[1], 11)


if __name__ == '__main__':
    unittest.main()
