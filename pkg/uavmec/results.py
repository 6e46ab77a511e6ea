import concurrent.futures
import csv
import dataclasses
import io
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from uavmec import config
from uavmec import constants
from uavmec import simulator

LOG = logging.getLogger(__name__)


class OutputError(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


@dataclasses.dataclass(frozen=True)
class Cell:
    strategy: simulator.Strategy
    seed: int
    axis: Optional[str] = None
    point: Optional[float] = None

    @property
    def name(self) -> str:
        name = f"{self.strategy.value}-seed{self.seed}"
        if self.axis is not None:
            name += f"-{self.axis}-{self.point:g}"
        return name


@dataclasses.dataclass
class CellResult:
    cell: Cell
    trace: Optional[simulator.MetricTrace] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.trace is None

    def summary(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "cell": self.cell.name,
            "strategy": self.cell.strategy.value,
            "seed": self.cell.seed,
            "axis": self.cell.axis,
            "point": self.cell.point,
        }
        if self.trace is None:
            row["error"] = self.error
            return row
        row.update(
            {
                "utility": self.trace.total_utility,
                "qoe": self.trace.total_qoe,
                "revenue": self.trace.total_revenue,
                "generated": self.trace.generated,
                "completed": self.trace.completed,
                "dropped": self.trace.dropped,
                "in_flight": self.trace.in_flight,
            }
        )
        return row

    def audit(self) -> Dict[str, Any]:
        report: Dict[str, Any] = {"cell": self.cell.name}
        if self.trace is None:
            report["error"] = self.error
            return report
        trace = self.trace
        report.update(
            {
                "violations": [
                    dataclasses.asdict(v) for v in trace.violations
                ],
                "complexity": {
                    "negotiations": trace.negotiations,
                    "rounds": sum(r.rounds for r in trace.records),
                    "max_requests": max(
                        (r.requests for r in trace.records), default=0
                    ),
                },
                "conservation": {
                    "generated": trace.generated,
                    "completed": trace.completed,
                    "dropped": trace.dropped,
                    "in_flight": trace.in_flight,
                    "holds": trace.generated
                    == trace.completed + trace.dropped + trace.in_flight,
                },
                "shared_propulsion_revenue": trace.total_shared_revenue,
            }
        )
        return report


@dataclasses.dataclass
class ResultBundle:
    experiment: config.ExperimentConfig
    results: List[CellResult]

    @property
    def failures(self) -> List[CellResult]:
        return [r for r in self.results if r.failed]

    @property
    def violation_count(self) -> int:
        return sum(len(r.trace.violations) for r in self.results if r.trace)

    @property
    def clean(self) -> bool:
        return not self.failures and self.violation_count == 0

    def summary_rows(self) -> List[Dict[str, Any]]:
        return [r.summary() for r in self.results]


def run_cell(settings: simulator.RunSettings, cell: Cell) -> CellResult:
    """Run one cell, turning any failure into a recorded error."""
    LOG.debug(f"Starting cell {cell.name}")
    try:
        trace = simulator.run(settings, cell.strategy, cell.seed)
    except Exception as e:
        LOG.warning(f"Cell {cell.name} failed: {e}")
        return CellResult(cell=cell, error=f"{type(e).__name__}: {e}")
    LOG.debug(f"Finished cell {cell.name}")
    return CellResult(cell=cell, trace=trace)


def plan_cells(
    experiment: config.ExperimentConfig,
    strategies: Sequence[simulator.Strategy],
    sweep: bool = False,
) -> List[Tuple[Cell, simulator.RunSettings]]:
    points: List[Tuple[Optional[float], config.ExperimentConfig]] = [
        (None, experiment)
    ]
    axis = experiment.sweep_axis if sweep else None
    if axis is not None:
        points = [
            (point, experiment.for_sweep(axis, point))
            for point in experiment.sweep_grid
        ]
    cells = []
    for point, variant in points:
        settings = variant.run_settings
        for strategy in strategies:
            for seed in experiment.seeds:
                cells.append((Cell(strategy, seed, axis, point), settings))
    return cells


def run_experiment(
    experiment: config.ExperimentConfig,
    strategies: Optional[Sequence[simulator.Strategy]] = None,
    sweep: bool = False,
) -> ResultBundle:
    if strategies is None:
        strategies = experiment.strategies
    cells = plan_cells(experiment, strategies, sweep)
    LOG.debug(f"Running {len(cells)} cells with {experiment.workers} workers")
    if experiment.workers > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=experiment.workers
        ) as pool:
            results = list(
                pool.map(
                    run_cell,
                    [settings for _, settings in cells],
                    [cell for cell, _ in cells],
                )
            )
    else:
        results = [run_cell(settings, cell) for cell, settings in cells]
    return ResultBundle(experiment=experiment, results=results)


def _format(value: float) -> str:
    return constants.FLOAT_FORMAT % value


def write_trace(stream: io.TextIOBase, trace: simulator.MetricTrace) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(constants.TRACE_COLUMNS)
    for record in trace.records:
        writer.writerow(
            [
                record.slot,
                trace.strategy.value,
                trace.seed,
                _format(record.utility),
                _format(record.qoe),
                _format(record.revenue),
                record.generated,
                record.completed,
                record.dropped,
            ]
        )


def write_trajectory(
    stream: io.TextIOBase, trace: simulator.MetricTrace
) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(constants.TRAJECTORY_COLUMNS)
    for row in trace.trajectory:
        writer.writerow(
            [row.epoch, row.uav_id, _format(row.x), _format(row.y)]
        )


def results_dir(base: str, experiment: config.ExperimentConfig) -> str:
    seeds = "_".join(str(seed) for seed in experiment.seeds)
    path = os.path.join(base, f"{experiment.hash[:12]}-seeds-{seeds}")
    candidate = path
    suffix = 1
    while os.path.exists(candidate):
        candidate = f"{path}-{suffix}"
        suffix += 1
    return candidate


def _dump_yaml(path: str, data: Any) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)


def emit_outputs(bundle: ResultBundle, base: str) -> str:
    """Write every trace, the summary and the audit report.

    Returns the new results directory. It never reuses an existing one.
    """
    path = results_dir(base, bundle.experiment)
    try:
        os.makedirs(os.path.join(path, "traces"))
        os.makedirs(os.path.join(path, "trajectories"))
        for result in bundle.results:
            if result.trace is None:
                continue
            name = f"{result.cell.name}.csv"
            with open(
                os.path.join(path, "traces", name), "w", newline=""
            ) as f:
                write_trace(f, result.trace)
            with open(
                os.path.join(path, "trajectories", name), "w", newline=""
            ) as f:
                write_trajectory(f, result.trace)
        _dump_yaml(
            os.path.join(path, "summary.yaml"), bundle.summary_rows()
        )
        _dump_yaml(
            os.path.join(path, "audit.yaml"),
            [result.audit() for result in bundle.results],
        )
        with open(os.path.join(path, "config.yaml"), "w") as f:
            f.write(bundle.experiment.dump())
    except OSError as e:
        raise OutputError(
            f"Cannot write results to {e.filename or path}: {e.strerror}"
        ) from e
    LOG.debug(f"Results written to {path}")
    return path
