import csv
import io
import os
import tempfile
import unittest
from unittest import mock

import yaml

from uavmec import config
from uavmec import constants
from uavmec import results
from uavmec import simulator


def _experiment(text="experiment:\n  seeds: [3, 5]\n"):
    return config.parse_config_text(text)


def _trace(strategy=simulator.Strategy.TJCCT, seed=3, slots=3):
    records = [
        simulator.SlotRecord(
            slot=slot,
            utility=0.1 * slot + 1 / 3,
            qoe=0.1 * slot,
            revenue=1 / 3,
            generated=2,
            completed=1,
            dropped=1 if slot % 2 else 0,
        )
        for slot in range(1, slots + 1)
    ]
    return simulator.MetricTrace(
        strategy=strategy,
        seed=seed,
        records=records,
        trajectory=[
            simulator.TrajectoryRow(1, 2, 0.0, 0.0),
            simulator.TrajectoryRow(2, 2, 25.0, 1 / 3),
        ],
        in_flight=sum(2 - 1 - (slot % 2) for slot in range(1, slots + 1)),
    )


class TestCells(unittest.TestCase):
    def test_names(self):
        self.assertEqual(
            "TJCCT-seed3", results.Cell(simulator.Strategy.TJCCT, 3).name
        )
        self.assertEqual(
            "NS-seed1-md-count-40",
            results.Cell(simulator.Strategy.NS, 1, "md-count", 40.0).name,
        )

    def test_plan_covers_strategies_and_seeds(self):
        cells = results.plan_cells(
            _experiment(), [simulator.Strategy.LS, simulator.Strategy.GS]
        )

        self.assertEqual(
            [("LS", 3), ("LS", 5), ("GS", 3), ("GS", 5)],
            [(c.strategy.value, c.seed) for c, _ in cells],
        )
        self.assertTrue(all(c.axis is None for c, _ in cells))

    def test_plan_of_a_sweep(self):
        experiment = _experiment(
            "experiment:\n"
            "  seeds: [1]\n"
            "  sweep:\n"
            "    axis: md-count\n"
            "    grid: [5, 10]\n"
        )

        cells = results.plan_cells(
            experiment, [simulator.Strategy.TJCCT], sweep=True
        )

        self.assertEqual([5.0, 10.0], [c.point for c, _ in cells])
        self.assertEqual(
            [5, 10], [s.scenario.md_count for _, s in cells]
        )

    def test_sweep_axis_is_ignored_outside_sweeps(self):
        experiment = _experiment(
            "experiment:\n  sweep:\n    axis: md-count\n    grid: [5]\n"
        )

        cells = results.plan_cells(experiment, [simulator.Strategy.LS])

        self.assertEqual(1, len(cells))
        self.assertIsNone(cells[0][0].point)
        self.assertEqual(20, cells[0][1].scenario.md_count)


class TestTraceFiles(unittest.TestCase):
    def test_empty_trace_has_only_the_header(self):
        stream = io.StringIO()

        results.write_trace(
            stream, simulator.MetricTrace(simulator.Strategy.LS, 1)
        )

        self.assertEqual(
            ",".join(constants.TRACE_COLUMNS) + "\n", stream.getvalue()
        )

    def test_one_row_per_slot(self):
        stream = io.StringIO()
        trace = _trace(slots=4)

        results.write_trace(stream, trace)

        lines = stream.getvalue().splitlines()
        self.assertEqual(5, len(lines))
        self.assertTrue(lines[1].startswith("1,TJCCT,3,"))

    def test_floats_round_trip(self):
        stream = io.StringIO()
        trace = _trace()

        results.write_trace(stream, trace)

        rows = list(csv.DictReader(io.StringIO(stream.getvalue())))
        self.assertEqual(
            [r.utility for r in trace.records],
            [float(row["U_t"]) for row in rows],
        )

    def test_trajectory_rows(self):
        stream = io.StringIO()

        results.write_trajectory(stream, _trace())

        rows = list(csv.reader(io.StringIO(stream.getvalue())))
        self.assertEqual(constants.TRAJECTORY_COLUMNS, rows[0])
        self.assertEqual(["2", "2", "25"], rows[2][:3])
        self.assertEqual(1 / 3, float(rows[2][3]))


class TestRunCell(unittest.TestCase):
    def test_failure_is_recorded(self):
        cell = results.Cell(simulator.Strategy.TJCCT, 1)

        with mock.patch(
            "uavmec.simulator.run", side_effect=RuntimeError("boom")
        ):
            result = results.run_cell(simulator.RunSettings(), cell)

        self.assertTrue(result.failed)
        self.assertEqual("RuntimeError: boom", result.error)
        self.assertEqual(
            "RuntimeError: boom", result.summary()["error"]
        )
        self.assertEqual("RuntimeError: boom", result.audit()["error"])

    def test_success_keeps_the_trace(self):
        trace = _trace()
        cell = results.Cell(simulator.Strategy.TJCCT, 3)

        with mock.patch("uavmec.simulator.run", return_value=trace) as run:
            result = results.run_cell(simulator.RunSettings(), cell)

        self.assertFalse(result.failed)
        self.assertIs(trace, result.trace)
        run.assert_called_once_with(
            simulator.RunSettings(), simulator.Strategy.TJCCT, 3
        )

    def test_experiment_keeps_going_after_a_failure(self):
        def fake_run(settings, strategy, seed):
            if seed == 5:
                raise ValueError("bad seed")
            return _trace(strategy, seed)

        with mock.patch("uavmec.simulator.run", side_effect=fake_run):
            bundle = results.run_experiment(
                _experiment(), [simulator.Strategy.TJCCT]
            )

        self.assertEqual(2, len(bundle.results))
        self.assertEqual([5], [r.cell.seed for r in bundle.failures])
        self.assertFalse(bundle.clean)


class TestBundle(unittest.TestCase):
    def test_violations_make_the_bundle_dirty(self):
        trace = _trace()
        trace.run_violations.append(
            simulator.Violation(3, "conservation", "lost a task")
        )
        bundle = results.ResultBundle(
            _experiment(),
            [results.CellResult(results.Cell(trace.strategy, 3), trace)],
        )

        self.assertEqual(1, bundle.violation_count)
        self.assertFalse(bundle.clean)
        report = bundle.results[0].audit()
        self.assertEqual("conservation", report["violations"][0]["check"])
        self.assertTrue(report["conservation"]["holds"])


class TestEmitOutputs(unittest.TestCase):
    def setUp(self):
        super().setUp()
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.base = tmp.name
        self.experiment = _experiment()
        traces = [
            _trace(simulator.Strategy.TJCCT, 3),
            _trace(simulator.Strategy.TJCCT, 5, slots=2),
        ]
        self.bundle = results.ResultBundle(
            self.experiment,
            [
                results.CellResult(results.Cell(t.strategy, t.seed), t)
                for t in traces
            ]
            + [
                results.CellResult(
                    results.Cell(simulator.Strategy.LS, 3),
                    error="RuntimeError: boom",
                )
            ],
        )

    def test_writes_every_file(self):
        path = results.emit_outputs(self.bundle, self.base)

        self.assertEqual(
            os.path.join(
                self.base, f"{self.experiment.hash[:12]}-seeds-3_5"
            ),
            path,
        )
        self.assertEqual(
            ["TJCCT-seed3.csv", "TJCCT-seed5.csv"],
            sorted(os.listdir(os.path.join(path, "traces"))),
        )
        self.assertEqual(
            ["TJCCT-seed3.csv", "TJCCT-seed5.csv"],
            sorted(os.listdir(os.path.join(path, "trajectories"))),
        )
        with open(os.path.join(path, "config.yaml")) as f:
            self.assertEqual(
                self.experiment, config.parse_config_text(f.read())
            )
        with open(os.path.join(path, "audit.yaml")) as f:
            audit = yaml.safe_load(f)
        self.assertEqual(3, len(audit))
        self.assertEqual("RuntimeError: boom", audit[2]["error"])

    def test_summary_matches_the_traces(self):
        path = results.emit_outputs(self.bundle, self.base)

        with open(os.path.join(path, "summary.yaml")) as f:
            summary = yaml.safe_load(f)
        for row in summary[:2]:
            with open(os.path.join(path, "traces", f"{row['cell']}.csv")) as f:
                rows = list(csv.DictReader(f))
            self.assertAlmostEqual(
                sum(float(r["U_t"]) for r in rows), row["utility"]
            )
            self.assertEqual(
                sum(int(r["generated"]) for r in rows), row["generated"]
            )
            self.assertEqual(
                sum(int(r["dropped"]) for r in rows), row["dropped"]
            )

    def test_never_reuses_a_directory(self):
        first = results.emit_outputs(self.bundle, self.base)
        second = results.emit_outputs(self.bundle, self.base)
        third = results.emit_outputs(self.bundle, self.base)

        self.assertEqual(first + "-1", second)
        self.assertEqual(first + "-2", third)

    def test_write_failure(self):
        with mock.patch(
            "os.makedirs",
            side_effect=PermissionError(13, "Permission denied", "/ro"),
        ):
            with self.assertRaises(results.OutputError) as ctx:
                results.emit_outputs(self.bundle, self.base)

        self.assertEqual(
            "Cannot write results to /ro: Permission denied",
            str(ctx.exception),
        )


class TestDeterminism(unittest.TestCase):
    TEXT = """
scenario:
  md_count: 6
  uavs:
    - start: [200 m, 200 m]
      destination: [260 m, 200 m]
    - start: [300 m, 300 m]
      destination: [300 m, 240 m]
simulation:
  horizon: 40
  arrival_rate: 0.3
experiment:
  seeds: [1, 2]
  strategies: [TJCCT, GS]
  audit: true
"""

    def _files(self, path):
        contents = {}
        for root, _, names in os.walk(path):
            for name in names:
                full = os.path.join(root, name)
                with open(full, "rb") as f:
                    contents[os.path.relpath(full, path)] = f.read()
        return contents

    def test_same_config_writes_identical_files(self):
        with tempfile.TemporaryDirectory() as base:
            paths = [
                results.emit_outputs(
                    results.run_experiment(_experiment(self.TEXT)), base
                )
                for _ in range(2)
            ]

            first, second = [self._files(p) for p in paths]

        self.assertNotEqual(paths[0], paths[1])
        self.assertIn(os.path.join("traces", "TJCCT-seed2.csv"), first)
        self.assertIn(os.path.join("trajectories", "GS-seed1.csv"), first)
        self.assertEqual(first, second)
