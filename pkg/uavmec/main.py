import argparse
import logging
import sys
import traceback
from typing import Callable, List

from uavmec import config
from uavmec import handlers

LOG = logging.getLogger("__main__")


class ArgHandler:
    def __init__(
        self,
        run_handler,
        compare_handler,
        sweep_handler,
        validate_handler,
    ) -> None:
        self.run_handler = run_handler
        self.compare_handler = compare_handler
        self.sweep_handler = sweep_handler
        self.validate_handler = validate_handler

    @staticmethod
    def _add_config_arg(arg_parser: argparse.ArgumentParser) -> None:
        arg_parser.add_argument(
            "config",
            type=str,
            help="The YAML experiment config. An empty file runs the default "
            "scenario.",
        )

    @staticmethod
    def _add_experiment_args(arg_parser: argparse.ArgumentParser) -> None:
        arg_parser.add_argument(
            "--seed",
            dest="seeds",
            type=int,
            default=[],
            action="append",
            help="The seed of a run. Can be repeated. Overrides "
            "experiment.seeds of the config.",
        )
        arg_parser.add_argument(
            "--audit",
            dest="audit",
            default=False,
            action="store_true",
            help="Check every constraint in every slot and report the "
            "violations",
        )
        arg_parser.add_argument(
            "--out",
            type=str,
            default=None,
            help="The directory the results directory is created in. "
            "Overrides experiment.output_dir of the config.",
        )
        arg_parser.add_argument(
            "--mode",
            type=str,
            choices=["expected", "sampled"],
            default=None,
            help="Use the expected channel gain or sample the fading",
        )
        arg_parser.add_argument(
            "--workers",
            type=int,
            default=None,
            help="Number of worker processes running the cells. "
            "Defaulted to 1",
        )

    def _parse_args(self, sys_args) -> argparse.Namespace:
        arg_parser = argparse.ArgumentParser(
            usage="Simulate UAV assisted mobile edge computing"
        )
        arg_parser.add_argument(
            "--debug",
            dest="debug",
            default=False,
            action="store_true",
            help="Print debug logs",
        )

        # calling without subcommand prints the help
        arg_parser.set_defaults(
            func=lambda args: arg_parser.print_help() or handlers.EXIT_OK
        )

        subparsers = arg_parser.add_subparsers()

        run_parser = subparsers.add_parser(
            "run",
            help="Run the first configured strategy for every seed",
        )
        self._add_config_arg(run_parser)
        self._add_experiment_args(run_parser)
        run_parser.set_defaults(
            func=lambda args: self.run_handler().configure(args).execute()
        )

        compare_parser = subparsers.add_parser(
            "compare",
            help="Run every configured strategy for every seed",
        )
        self._add_config_arg(compare_parser)
        self._add_experiment_args(compare_parser)
        compare_parser.set_defaults(
            func=lambda args: self.compare_handler().configure(args).execute()
        )

        sweep_parser = subparsers.add_parser(
            "sweep",
            help="Compare the strategies over a grid of one scenario "
            "parameter",
        )
        self._add_config_arg(sweep_parser)
        self._add_experiment_args(sweep_parser)
        sweep_parser.add_argument(
            "--axis",
            type=str,
            choices=config.SWEEP_AXES,
            default=None,
            help="The swept parameter. task-size points are mean task sizes "
            "in Mb.",
        )

        def grid(value: str) -> List[float]:
            try:
                return [float(v) for v in value.split(",") if v.strip()]
            except ValueError as e:
                raise handlers.CmdException(
                    f"Invalid grid: '{value}'; " + str(e)
                ) from e

        sweep_parser.add_argument(
            "--grid",
            type=grid,
            default=None,
            help="Comma separated sweep points, e.g. 1,2,3,4,5",
        )
        sweep_parser.set_defaults(
            func=lambda args: self.sweep_handler().configure(args).execute()
        )

        validate_parser = subparsers.add_parser(
            "validate",
            help="Parse the config and print it fully resolved with its hash",
        )
        self._add_config_arg(validate_parser)
        validate_parser.set_defaults(
            func=lambda args: self.validate_handler()
            .configure(args)
            .execute()
        )

        return arg_parser.parse_args(args=sys_args)

    def get_subcommand_handler(self, sys_args) -> Callable[[], int]:
        args = self._parse_args(sys_args)
        return lambda: args.func(args)


def main(args=tuple(sys.argv[1:])) -> int:
    try:
        arg_handler = ArgHandler(
            run_handler=handlers.RunCmd,
            compare_handler=handlers.CompareCmd,
            sweep_handler=handlers.SweepCmd,
            validate_handler=handlers.ValidateCmd,
        )
        handler = arg_handler.get_subcommand_handler(args)
        return handler()
    except (
        handlers.CmdException,
        config.ConfigError,
    ) as e:
        print(e)
        LOG.debug(traceback.format_exc())
        return handlers.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
