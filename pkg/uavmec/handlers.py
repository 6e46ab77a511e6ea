import argparse
import logging
import shutil
from typing import List, Optional

import prettytable  # type: ignore

from uavmec import config
from uavmec import results
from uavmec import simulator

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_AUDIT = 3


class SummaryTable:
    FIELDS = ["utility", "qoe", "revenue", "completed", "dropped"]

    def __init__(self, bundle: results.ResultBundle) -> None:
        self.bundle = bundle

    def __str__(self) -> str:
        sweep = any(r.cell.axis for r in self.bundle.results)
        t = prettytable.PrettyTable()
        columns = ["strategy", "seed"]
        if sweep:
            columns.append("point")
        t.field_names = columns + self.FIELDS + ["violations"]
        for result in self.bundle.results:
            row: List = [result.cell.strategy.value, result.cell.seed]
            if sweep:
                row.append(f"{result.cell.point:g}")
            if result.trace is None:
                row += ["failed"] + [""] * len(self.FIELDS)
            else:
                summary = result.summary()
                row += [
                    (
                        f"{summary[f]:.4f}"
                        if isinstance(summary[f], float)
                        else summary[f]
                    )
                    for f in self.FIELDS
                ]
                row.append(len(result.trace.violations))
            t.add_row(row)
        t.align = "l"
        # Constant 5 was determined experimentally with terminal width
        # more or equal 30.
        t.max_table_width = shutil.get_terminal_size().columns - 5
        return t.__str__()


class ViolationsTable:
    def __init__(self, bundle: results.ResultBundle, limit: int = 20) -> None:
        self.bundle = bundle
        self.limit = limit

    def __str__(self) -> str:
        t = prettytable.PrettyTable()
        t.field_names = ["cell", "slot", "check", "detail"]
        rows = [
            [result.cell.name, v.slot, v.check, v.detail]
            for result in self.bundle.results
            if result.trace
            for v in result.trace.violations
        ]
        rows += [
            [result.cell.name, "", "error", result.error]
            for result in self.bundle.failures
        ]
        t.add_rows(rows[: self.limit])
        t.align = "l"
        t.max_table_width = shutil.get_terminal_size().columns - 5
        return t.__str__()


class ConfigTable:
    def __init__(self, experiment: config.ExperimentConfig) -> None:
        self.experiment = experiment

    def __str__(self) -> str:
        t = prettytable.PrettyTable()
        t.title = f"Resolved config {self.experiment.hash[:12]}"
        t.field_names = ["field", "value"]
        sim = self.experiment.simulation_params
        scenario = self.experiment.scenario_params
        t.add_rows(
            [
                ["MDs", scenario.md_count],
                ["servers", len(scenario.servers)],
                ["slots", sim.horizon],
                ["slot duration", f"{sim.slot_duration} s"],
                ["epoch length", sim.epoch_length],
                ["arrival rate", sim.arrival_rate],
                ["channel mode", self.experiment.channel_params.mode.value],
                ["seeds", self.experiment.seeds],
                [
                    "strategies",
                    [s.value for s in self.experiment.strategies],
                ],
                ["sweep axis", self.experiment.sweep_axis],
                ["sweep grid", self.experiment.sweep_grid],
                ["hash", self.experiment.hash],
            ]
        )
        t.align = "l"
        t.max_table_width = shutil.get_terminal_size().columns - 5
        return t.__str__()


class CmdException(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


class Cmd:
    def __init__(self) -> None:
        self.config: config.Config

    def configure(self, args: argparse.Namespace) -> "Cmd":
        # This is catch 22 if we want to get debug info from config parsing
        # the we cannot use config object here
        if args.debug:
            logging.basicConfig(level=logging.DEBUG)

        self.config = config.Config(args)
        return self

    def execute(self) -> int:
        raise NotImplementedError()


class ExperimentCmd(Cmd):
    sweep = False

    def strategies(self) -> Optional[List[simulator.Strategy]]:
        return None

    def execute(self) -> int:
        experiment = self.config.experiment
        bundle = results.run_experiment(
            experiment, self.strategies(), sweep=self.sweep
        )
        try:
            path = results.emit_outputs(bundle, experiment.output_dir)
        except results.OutputError as e:
            raise CmdException(str(e)) from e

        print(SummaryTable(bundle))
        print(f"Results written to {path}")
        if bundle.clean:
            return EXIT_OK
        print(
            f"{bundle.violation_count} audit violations and "
            f"{len(bundle.failures)} failed cells:"
        )
        print(ViolationsTable(bundle))
        return EXIT_AUDIT


class RunCmd(ExperimentCmd):
    def strategies(self) -> Optional[List[simulator.Strategy]]:
        return self.config.experiment.strategies[:1]


class CompareCmd(ExperimentCmd):
    pass


class SweepCmd(ExperimentCmd):
    sweep = True

    def execute(self) -> int:
        experiment = self.config.experiment
        if experiment.sweep_axis is None:
            raise CmdException(
                "A sweep needs an axis, use --axis or experiment.sweep.axis"
            )
        if not experiment.sweep_grid:
            raise CmdException(
                "A sweep needs grid points, use --grid or "
                "experiment.sweep.grid"
            )
        return super().execute()


class ValidateCmd(Cmd):
    def execute(self) -> int:
        print(ConfigTable(self.config.experiment))
        print(self.config.experiment.dump())
        return EXIT_OK
