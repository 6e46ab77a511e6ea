import argparse
import os
import tempfile
import textwrap
import unittest

from uavmec import channel
from uavmec import config
from uavmec import scenario
from uavmec import simulator


def _parse(text):
    return config.parse_config_text(textwrap.dedent(text))


class TestDefaults(unittest.TestCase):
    def test_empty_file_gives_the_default_run(self):
        experiment = config.parse_config_text("")

        self.assertEqual(simulator.RunSettings(), experiment.run_settings)
        self.assertEqual(scenario.ScenarioParams(), experiment.scenario_params)
        self.assertEqual([1], experiment.seeds)
        self.assertEqual(list(simulator.Strategy), experiment.strategies)
        self.assertFalse(experiment.audit)
        self.assertEqual(1, experiment.workers)
        self.assertIsNone(experiment.sweep_axis)
        self.assertEqual([], experiment.sweep_grid)

    def test_empty_sections_are_allowed(self):
        experiment = _parse(
            """
            scenario:
            experiment:
            """
        )

        self.assertEqual(config.parse_config_text(""), experiment)


class TestUnits(unittest.TestCase):
    def test_quantities_are_normalised(self):
        experiment = _parse(
            """
            scenario:
              md:
                cpu_capacity: [500 MHz, 1 GHz]
                transmit_power: [10 dBm, 20 dBm]
              task:
                size: [1 Mb, 5000 kb]
                deadline: [500 ms, 5 s]
            channel:
              bandwidth: 2 MHz
              noise_density: -174 dBm/Hz
              reference_gain: -40 dB
            """
        )

        params = experiment.scenario_params
        self.assertEqual((0.5e9, 1e9), params.md.cpu_capacity)
        self.assertAlmostEqual(0.01, params.md.transmit_power[0])
        self.assertAlmostEqual(0.1, params.md.transmit_power[1])
        self.assertEqual((1e6, 5e6), params.task.size)
        self.assertAlmostEqual(0.5, params.task.deadline[0])
        self.assertEqual(5.0, params.task.deadline[1])
        link = experiment.channel_params
        self.assertEqual(2e6, link.bandwidth)
        self.assertAlmostEqual(1e-4, link.reference_gain)
        self.assertAlmostEqual(
            10 ** (-20.4) * 2e6, link.noise_power, delta=1e-28
        )

    def test_unit_may_follow_the_number_directly(self):
        experiment = _parse(
            """
            scenario:
              md:
                transmit_power: [10dBm, 20dBm]
              mbs:
                - position: [250m, 250m]
                  core_capacity: [10GHz, 2e10 Hz]
            simulation:
              slot_duration: 100ms
            """
        )

        params = experiment.scenario_params
        self.assertAlmostEqual(0.1, params.md.transmit_power[1])
        self.assertEqual((250.0, 250.0), params.servers[0].position)
        self.assertEqual((10e9, 20e9), params.servers[0].core_capacity)
        self.assertAlmostEqual(0.1, experiment.simulation_params.slot_duration)

    def test_unknown_unit(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                scenario:
                  task:
                    deadline: [1 parsec, 2 s]
                """
            )

        self.assertIn("parsec", str(ctx.exception))

    def test_garbage_quantity(self):
        with self.assertRaises(config.ConfigError):
            _parse(
                """
                simulation:
                  slot_duration: fast
                """
            )


class TestValidation(unittest.TestCase):
    def test_range_min_above_max_names_the_line(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                scenario:
                  task:
                    deadline: [5, 1]
                """
            )

        self.assertIn("scenario.task.deadline", str(ctx.exception))
        self.assertIn("line 4", str(ctx.exception))

    def test_unknown_key(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                scenario:
                  md_cnt: 3
                """
            )

        self.assertIn("md_cnt", str(ctx.exception))
        self.assertIn("line 3", str(ctx.exception))

    def test_unknown_top_level_section(self):
        with self.assertRaises(config.ConfigError) as ctx:
            config.parse_config_text("bogus: 1\n")

        self.assertIn("bogus", str(ctx.exception))

    def test_list_item_error_names_the_item(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                scenario:
                  uavs:
                    - start: [0, 0]
                      destination: [100, 0]
                      cores: [4, 2]
                """
            )

        self.assertIn("scenario.uavs[0].cores", str(ctx.exception))
        self.assertIn("line 6", str(ctx.exception))

    def test_broken_yaml(self):
        with self.assertRaises(config.ConfigError) as ctx:
            config.parse_config_text("scenario: [1", "broken.yaml")

        self.assertIn("broken.yaml", str(ctx.exception))

    def test_horizon_must_fill_whole_epochs(self):
        with self.assertRaises(config.ConfigError):
            _parse(
                """
                simulation:
                  horizon: 505
                """
            )

    def test_bad_strategy(self):
        with self.assertRaises(config.ConfigError):
            _parse(
                """
                experiment:
                  strategies: [TJCCT, GTS]
                """
            )

    def test_needs_a_worker(self):
        with self.assertRaises(config.ConfigError):
            _parse(
                """
                experiment:
                  workers: 0
                """
            )

    def test_integer_fields_reject_fractions(self):
        with self.assertRaises(config.ConfigError):
            _parse(
                """
                scenario:
                  md_count: 2.5
                """
            )

    def test_memory_must_be_a_probability(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                mobility:
                  memory: 1.5
                """
            )

        self.assertIn("memory 1.5", str(ctx.exception))

    def test_weights_must_be_in_the_unit_interval(self):
        for text in (
            """
            scenario:
              md:
                weight: 1.5
            """,
            """
            scenario:
              uavs:
                - start: [0 m, 0 m]
                  destination: [100 m, 0 m]
                  weight: -0.1
            """,
        ):
            with self.assertRaises(config.ConfigError) as ctx:
                _parse(text)

            self.assertIn("is not in [0, 1]", str(ctx.exception))

    def test_uav_must_reach_its_destination(self):
        with self.assertRaises(config.ConfigError) as ctx:
            _parse(
                """
                scenario:
                  uavs:
                    - start: [0 m, 0 m]
                      destination: [500 m, 0 m]
                      max_speed: 25 m/s
                simulation:
                  horizon: 100
                """
            )

        self.assertIn("500.0 m from its start", str(ctx.exception))
        self.assertIn("225.0 m", str(ctx.exception))

    def test_reachable_destination_is_accepted(self):
        experiment = _parse(
            """
            scenario:
              uavs:
                - start: [0 m, 0 m]
                  destination: [225 m, 0 m]
            simulation:
              horizon: 100
            """
        )

        self.assertEqual(
            (225.0, 0.0), experiment.scenario_params.servers[1].destination
        )

    def test_missing_file(self):
        with self.assertRaises(config.ConfigError):
            config.parse_config("/nonexistent/uavmec.yaml")


class TestExperimentConfig(unittest.TestCase):
    TEXT = """
        scenario:
          md_count: 4
          task:
            size: [1 Mb, 3 Mb]
          uavs:
            - start: [0 m, 0 m]
              destination: [100 m, 0 m]
        channel:
          mode: sampled
        simulation:
          horizon: 100
        experiment:
          seeds: [3, 5]
          strategies: [TJCCT, NS]
        """

    def setUp(self):
        super().setUp()
        self.experiment = _parse(self.TEXT)

    def test_servers(self):
        servers = self.experiment.scenario_params.servers

        self.assertEqual(2, len(servers))
        self.assertEqual(scenario.ServerKind.TERRESTRIAL, servers[0].kind)
        self.assertEqual(scenario.ServerKind.AERIAL, servers[1].kind)
        self.assertEqual((100.0, 0.0), servers[1].destination)
        self.assertEqual((2, 4), servers[1].cores)

    def test_experiment_fields(self):
        self.assertEqual([3, 5], self.experiment.seeds)
        self.assertEqual(
            [simulator.Strategy.TJCCT, simulator.Strategy.NS],
            self.experiment.strategies,
        )
        self.assertEqual(
            channel.ChannelMode.SAMPLED, self.experiment.channel_params.mode
        )

    def test_dump_round_trip(self):
        again = config.parse_config_text(self.experiment.dump())

        self.assertEqual(self.experiment, again)
        self.assertEqual(self.experiment.hash, again.hash)
        self.assertEqual(self.experiment.to_dict(), again.to_dict())

    def test_hash_tracks_content(self):
        other = _parse(self.TEXT.replace("md_count: 4", "md_count: 5"))

        self.assertNotEqual(self.experiment.hash, other.hash)
        self.assertEqual(64, len(other.hash))

    def test_overrides(self):
        changed = self.experiment.with_overrides(
            seeds=[9],
            audit=True,
            output_dir="/tmp/out",
            mode="expected",
            workers=3,
            axis="md-count",
            grid=[2.0, 4.0],
        )

        self.assertEqual([9], changed.seeds)
        self.assertTrue(changed.audit)
        self.assertTrue(changed.simulation_params.audit)
        self.assertEqual("/tmp/out", changed.output_dir)
        self.assertEqual(
            channel.ChannelMode.EXPECTED, changed.channel_params.mode
        )
        self.assertEqual(3, changed.workers)
        self.assertEqual("md-count", changed.sweep_axis)
        self.assertEqual([2.0, 4.0], changed.sweep_grid)
        # the original is left alone
        self.assertEqual([3, 5], self.experiment.seeds)

    def test_empty_overrides_keep_the_config(self):
        self.assertEqual(
            self.experiment,
            self.experiment.with_overrides(seeds=[], audit=False),
        )

    def test_sweep_points(self):
        sizes = self.experiment.for_sweep("task-size", 3.0)
        rate = self.experiment.for_sweep("arrival-rate", 0.2)
        count = self.experiment.for_sweep("md-count", 10.0)

        self.assertEqual((1.5e6, 4.5e6), sizes.scenario_params.task.size)
        self.assertEqual(0.2, rate.simulation_params.arrival_rate)
        self.assertEqual(10, count.scenario_params.md_count)
        self.assertNotEqual(self.experiment.hash, count.hash)

    def test_unknown_sweep_axis(self):
        with self.assertRaises(config.ConfigError):
            self.experiment.for_sweep("altitude", 50.0)


class TestConfig(unittest.TestCase):
    def test_command_line_overrides_the_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "experiment.yaml")
            with open(path, "w") as f:
                f.write("experiment:\n  seeds: [1, 2]\n")
            args = argparse.Namespace(
                config=path, seeds=[7], audit=False, out=None
            )

            cfg = config.Config(args)

        self.assertEqual([7], cfg.experiment.seeds)
        self.assertEqual(path, cfg.config_path)
        self.assertEqual("results", cfg.experiment.output_dir)
